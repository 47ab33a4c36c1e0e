#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mlnood/error.hpp"
#include "mlnood/io.hpp"
#include "mlnood/parallel.hpp"
#include "mlnood/schema.hpp"

namespace mlnood {

// ---------------------------------------------------------------------------
// Abstract syntax
// ---------------------------------------------------------------------------

enum class NodeKind : std::uint8_t { Atom, Not, And, Or, Xor, Implies };

struct Node;
using NodePtr = std::shared_ptr<const Node>;

// Immutable tree node. Subtrees are shared, so copying a tree is cheap.
// An Atom without a value is the bare-identifier form (`is_octagon`), which
// compiles to `is_octagon=true` on binary concepts.
struct Node {
  NodeKind kind;
  std::string concept_name;
  std::optional<std::string> value;
  NodePtr lhs;
  NodePtr rhs;
};

inline NodePtr make_atom(std::string concept_name, std::optional<std::string> value = std::nullopt) {
  return std::make_shared<const Node>(Node{NodeKind::Atom, std::move(concept_name), std::move(value), {}, {}});
}
inline NodePtr make_not(NodePtr child) {
  return std::make_shared<const Node>(Node{NodeKind::Not, {}, {}, std::move(child), {}});
}
inline NodePtr make_binary(NodeKind kind, NodePtr lhs, NodePtr rhs) {
  return std::make_shared<const Node>(Node{kind, {}, {}, std::move(lhs), std::move(rhs)});
}
inline NodePtr make_and(NodePtr a, NodePtr b) { return make_binary(NodeKind::And, std::move(a), std::move(b)); }
inline NodePtr make_or(NodePtr a, NodePtr b) { return make_binary(NodeKind::Or, std::move(a), std::move(b)); }
inline NodePtr make_xor(NodePtr a, NodePtr b) { return make_binary(NodeKind::Xor, std::move(a), std::move(b)); }
inline NodePtr make_implies(NodePtr a, NodePtr b) {
  return make_binary(NodeKind::Implies, std::move(a), std::move(b));
}

inline bool tree_equal(const NodePtr& a, const NodePtr& b) {
  if (a == b) return true;
  if (!a || !b) return false;
  if (a->kind != b->kind) return false;
  switch (a->kind) {
    case NodeKind::Atom:
      return a->concept_name == b->concept_name && a->value == b->value;
    case NodeKind::Not:
      return tree_equal(a->lhs, b->lhs);
    default:
      return tree_equal(a->lhs, b->lhs) && tree_equal(a->rhs, b->rhs);
  }
}

// depth(leaf) = 1, depth(node) = 1 + max(children)
inline std::size_t tree_depth(const NodePtr& n) {
  switch (n->kind) {
    case NodeKind::Atom:
      return 1;
    case NodeKind::Not:
      return 1 + tree_depth(n->lhs);
    default:
      return 1 + std::max(tree_depth(n->lhs), tree_depth(n->rhs));
  }
}

namespace detail {

inline int precedence(NodeKind k) {
  switch (k) {
    case NodeKind::Implies: return 1;
    case NodeKind::Xor: return 2;
    case NodeKind::Or: return 3;
    case NodeKind::And: return 4;
    case NodeKind::Not: return 5;
    case NodeKind::Atom: return 6;
  }
  return 0;
}

inline const char* op_text(NodeKind k) {
  switch (k) {
    case NodeKind::Implies: return " -> ";
    case NodeKind::Xor: return " xor ";
    case NodeKind::Or: return " or ";
    case NodeKind::And: return " and ";
    default: return "";
  }
}

inline void print_node(const NodePtr& n, std::string& out) {
  auto child = [&out](const NodePtr& c, bool parens) {
    if (parens) out += '(';
    print_node(c, out);
    if (parens) out += ')';
  };
  const int p = precedence(n->kind);
  switch (n->kind) {
    case NodeKind::Atom:
      out += n->concept_name;
      if (n->value) out += '=' + *n->value;
      return;
    case NodeKind::Not:
      out += "not ";
      child(n->lhs, precedence(n->lhs->kind) < p);
      return;
    case NodeKind::Implies:
      // right-associative
      child(n->lhs, precedence(n->lhs->kind) <= p);
      out += op_text(n->kind);
      child(n->rhs, precedence(n->rhs->kind) < p);
      return;
    default:
      child(n->lhs, precedence(n->lhs->kind) < p);
      out += op_text(n->kind);
      child(n->rhs, precedence(n->rhs->kind) <= p);
      return;
  }
}

}  // namespace detail

// Canonical text with the minimum parentheses needed to reparse to the same tree.
inline std::string to_string(const NodePtr& n) {
  std::string out;
  detail::print_node(n, out);
  return out;
}

struct ConstraintAst {
  NodePtr root;
  std::string source;

  bool operator==(const ConstraintAst& o) const { return tree_equal(root, o.root); }
};

// ---------------------------------------------------------------------------
// Lexer and parser
// ---------------------------------------------------------------------------

namespace detail {

enum class Tok { Ident, Eq, Arrow, LParen, RParen, And, Or, Xor, Not, End };

struct Token {
  Tok kind;
  std::string_view text;
  std::size_t offset;
};

inline const char* tok_name(Tok t) {
  switch (t) {
    case Tok::Ident: return "identifier";
    case Tok::Eq: return "'='";
    case Tok::Arrow: return "'->'";
    case Tok::LParen: return "'('";
    case Tok::RParen: return "')'";
    case Tok::And: return "'and'";
    case Tok::Or: return "'or'";
    case Tok::Xor: return "'xor'";
    case Tok::Not: return "'not'";
    case Tok::End: return "end of input";
  }
  return "?";
}

inline std::vector<Token> lex(std::string_view src) {
  std::vector<Token> toks;
  auto ident_head = [](char c) { return c == '_' || (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z'); };
  auto ident_tail = [&](char c) { return ident_head(c) || (c >= '0' && c <= '9'); };
  std::size_t i = 0;
  while (i < src.size()) {
    const char c = src[i];
    if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      ++i;
    } else if (c == '#') {
      while (i < src.size() && src[i] != '\n') ++i;
    } else if (c == '=') {
      toks.push_back({Tok::Eq, src.substr(i, 1), i});
      ++i;
    } else if (c == '(') {
      toks.push_back({Tok::LParen, src.substr(i, 1), i});
      ++i;
    } else if (c == ')') {
      toks.push_back({Tok::RParen, src.substr(i, 1), i});
      ++i;
    } else if (c == '-') {
      if (i + 1 < src.size() && src[i + 1] == '>') {
        toks.push_back({Tok::Arrow, src.substr(i, 2), i});
        i += 2;
      } else {
        throw SyntaxError("unexpected character '-' (did you mean '->'?)", i);
      }
    } else if (ident_head(c)) {
      std::size_t j = i + 1;
      while (j < src.size() && ident_tail(src[j])) ++j;
      auto word = src.substr(i, j - i);
      Tok kind = Tok::Ident;
      if (word == "and") kind = Tok::And;
      else if (word == "or") kind = Tok::Or;
      else if (word == "xor") kind = Tok::Xor;
      else if (word == "not") kind = Tok::Not;
      toks.push_back({kind, word, i});
      i = j;
    } else {
      throw SyntaxError(std::string("unexpected character '") + c + "'", i);
    }
  }
  toks.push_back({Tok::End, {}, src.size()});
  return toks;
}

class Parser {
 public:
  explicit Parser(std::string_view src) : toks_(lex(src)) {}

  NodePtr parse_all() {
    if (peek().kind == Tok::End) throw SyntaxError("empty constraint", peek().offset);
    auto n = parse_impl();
    if (peek().kind != Tok::End) fail("expected end of constraint");
    return n;
  }

 private:
  const Token& peek() const { return toks_[pos_]; }
  const Token& next() { return toks_[pos_++]; }
  bool accept(Tok t) {
    if (peek().kind != t) return false;
    ++pos_;
    return true;
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw SyntaxError(what + ", found " + tok_name(peek().kind), peek().offset);
  }

  NodePtr parse_impl() {
    auto lhs = parse_xor();
    if (accept(Tok::Arrow)) return make_implies(std::move(lhs), parse_impl());
    return lhs;
  }

  NodePtr parse_xor() {
    auto lhs = parse_or();
    while (accept(Tok::Xor)) lhs = make_xor(std::move(lhs), parse_or());
    return lhs;
  }

  NodePtr parse_or() {
    auto lhs = parse_and();
    while (accept(Tok::Or)) lhs = make_or(std::move(lhs), parse_and());
    return lhs;
  }

  NodePtr parse_and() {
    auto lhs = parse_unary();
    while (accept(Tok::And)) lhs = make_and(std::move(lhs), parse_unary());
    return lhs;
  }

  NodePtr parse_unary() {
    if (accept(Tok::Not)) return make_not(parse_unary());
    return parse_atom();
  }

  NodePtr parse_atom() {
    if (accept(Tok::LParen)) {
      auto inner = parse_impl();
      if (!accept(Tok::RParen)) fail("expected ')'");
      return inner;
    }
    if (peek().kind != Tok::Ident) fail("expected concept identifier or '('");
    std::string name(next().text);
    if (accept(Tok::Eq)) {
      if (peek().kind != Tok::Ident) fail("expected value identifier after '='");
      return make_atom(std::move(name), std::string(next().text));
    }
    return make_atom(std::move(name));
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// Parses one constraint. Throws SyntaxError with a byte offset.
inline ConstraintAst parse(std::string_view source) {
  detail::Parser p(source);
  return ConstraintAst{p.parse_all(), std::string(source)};
}

inline std::string to_string(const ConstraintAst& ast) { return to_string(ast.root); }

// ---------------------------------------------------------------------------
// Compilation
// ---------------------------------------------------------------------------

enum class Op : std::uint8_t { Test, Not, And, Or, Xor, Implies };

struct Instr {
  Op op;
  std::uint32_t concept_index = 0;
  ValueIndex value = 0;
};

// Postfix program over a boolean stack. `Test` pushes z[concept] == value.
struct Program {
  std::vector<Instr> code;
  std::size_t max_stack = 0;

  std::size_t count(Op op) const {
    return static_cast<std::size_t>(std::count_if(code.begin(), code.end(), [op](const Instr& i) { return i.op == op; }));
  }
};

class CompiledConstraint {
 public:
  CompiledConstraint(ConstraintAst ast, Program program, std::shared_ptr<const Schema> schema, std::size_t id)
      : ast_(std::move(ast)), program_(std::move(program)), schema_(std::move(schema)), id_(id) {}

  const ConstraintAst& ast() const noexcept { return ast_; }
  const Program& program() const noexcept { return program_; }
  const Schema& schema() const noexcept { return *schema_; }
  const std::shared_ptr<const Schema>& schema_ptr() const noexcept { return schema_; }
  std::size_t id() const noexcept { return id_; }
  const std::string& source() const noexcept { return ast_.source; }
  std::string text() const { return to_string(ast_.root); }

 private:
  ConstraintAst ast_;
  Program program_;
  std::shared_ptr<const Schema> schema_;
  std::size_t id_;
};

namespace detail {

inline std::size_t emit(const NodePtr& n, const Schema& schema, Program& prog, std::size_t depth) {
  auto push = [&](Instr i, std::size_t d) {
    prog.code.push_back(i);
    prog.max_stack = std::max(prog.max_stack, d);
    return d;
  };
  switch (n->kind) {
    case NodeKind::Atom: {
      auto ci = schema.find(n->concept_name);
      if (!ci) throw DataError("unknown concept '" + n->concept_name + "'");
      const auto& c = schema.concept_at(*ci);
      ValueIndex vi;
      if (!n->value) {
        if (!c.is_binary())
          throw DataError("bare identifier '" + c.name + "' used on non-binary concept; write " + c.name +
                          "=<value>");
        vi = 1;
      } else {
        auto found = c.value_index(*n->value);
        if (!found) {
          std::string dom;
          for (const auto& v : c.values) dom += (dom.empty() ? "" : ", ") + v;
          throw DataError("unknown value '" + *n->value + "' for concept '" + c.name + "'; valid values: {" +
                          dom + "}");
        }
        vi = *found;
      }
      return push({Op::Test, static_cast<std::uint32_t>(*ci), vi}, depth + 1);
    }
    case NodeKind::Not: {
      emit(n->lhs, schema, prog, depth);
      return push({Op::Not}, depth + 1);
    }
    default: {
      emit(n->lhs, schema, prog, depth);
      emit(n->rhs, schema, prog, depth + 1);
      Op op = n->kind == NodeKind::And ? Op::And
              : n->kind == NodeKind::Or ? Op::Or
              : n->kind == NodeKind::Xor ? Op::Xor
                                         : Op::Implies;
      return push({op}, depth + 1);
    }
  }
}

}  // namespace detail

// Resolves atoms against `schema`. Throws DataError on unknown concepts or
// values, and on bare identifiers naming non-binary concepts.
inline CompiledConstraint compile(const ConstraintAst& ast, std::shared_ptr<const Schema> schema, std::size_t id = 0) {
  Program prog;
  detail::emit(ast.root, *schema, prog, 0);
  return CompiledConstraint(ast, std::move(prog), std::move(schema), id);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

namespace detail {

// Runs the program without validating `z`.
inline bool run_scalar(const Program& prog, const ValueIndex* z) {
  std::array<bool, 64> small{};
  std::vector<bool> big;
  const bool use_small = prog.max_stack <= small.size();
  if (!use_small) big.resize(prog.max_stack);
  auto at = [&](std::size_t i) -> bool { return use_small ? small[i] : static_cast<bool>(big[i]); };
  auto set = [&](std::size_t i, bool v) {
    if (use_small) small[i] = v;
    else big[i] = v;
  };
  std::size_t sp = 0;
  for (const auto& in : prog.code) {
    switch (in.op) {
      case Op::Test: set(sp++, z[in.concept_index] == in.value); break;
      case Op::Not: set(sp - 1, !at(sp - 1)); break;
      case Op::And: --sp, set(sp - 1, at(sp - 1) && at(sp)); break;
      case Op::Or: --sp, set(sp - 1, at(sp - 1) || at(sp)); break;
      case Op::Xor: --sp, set(sp - 1, at(sp - 1) != at(sp)); break;
      case Op::Implies: --sp, set(sp - 1, !at(sp - 1) || at(sp)); break;
    }
  }
  return at(0);
}

}  // namespace detail

// φ(z) ∈ {0, 1}: the single-object true-grounding count.
inline int evaluate(const CompiledConstraint& c, std::span<const ValueIndex> z) {
  c.schema().validate(z);
  return detail::run_scalar(c.program(), z.data()) ? 1 : 0;
}

inline int evaluate(const CompiledConstraint& c, const SemanticVector& z) { return evaluate(c, z.view()); }

// Evaluates programs over blocks of rows, one instruction at a time across
// the whole block. Holds scratch space; one instance per thread.
class BlockEvaluator {
 public:
  static constexpr std::size_t kBlock = 1024;

  // Writes φ(row) for rows [0, n) of a row-major cell matrix into `out`.
  // n must be <= kBlock. Cells are assumed validated.
  void run(const Program& prog, const ValueIndex* cells, std::size_t stride, std::size_t n, std::uint8_t* out) {
    if (stack_.size() < prog.max_stack * kBlock) stack_.resize(prog.max_stack * kBlock);
    std::uint8_t* base = stack_.data();
    std::size_t sp = 0;
    for (const auto& in : prog.code) {
      switch (in.op) {
        case Op::Test: {
          std::uint8_t* dst = base + (sp++) * kBlock;
          const ValueIndex* col = cells + in.concept_index;
          const ValueIndex v = in.value;
          for (std::size_t r = 0; r < n; ++r) dst[r] = col[r * stride] == v;
          break;
        }
        case Op::Not: {
          std::uint8_t* a = base + (sp - 1) * kBlock;
          for (std::size_t r = 0; r < n; ++r) a[r] ^= 1;
          break;
        }
        default: {
          --sp;
          std::uint8_t* a = base + (sp - 1) * kBlock;
          const std::uint8_t* b = base + sp * kBlock;
          switch (in.op) {
            case Op::And: for (std::size_t r = 0; r < n; ++r) a[r] &= b[r]; break;
            case Op::Or: for (std::size_t r = 0; r < n; ++r) a[r] |= b[r]; break;
            case Op::Xor: for (std::size_t r = 0; r < n; ++r) a[r] ^= b[r]; break;
            default: for (std::size_t r = 0; r < n; ++r) a[r] = (a[r] ^ 1) | b[r]; break;
          }
        }
      }
    }
    std::copy(base, base + n, out);
  }

 private:
  std::vector<std::uint8_t> stack_;
};

// Elementwise φ over a row-major matrix of already-validated vectors.
inline std::vector<std::uint8_t> evaluate_cells(const CompiledConstraint& c, std::span<const ValueIndex> cells,
                                                std::size_t stride) {
  const std::size_t n = stride == 0 ? 0 : cells.size() / stride;
  std::vector<std::uint8_t> out(n);
  parallel_for_blocks(n, BlockEvaluator::kBlock, [&](std::size_t begin, std::size_t end) {
    BlockEvaluator ev;
    for (std::size_t b = begin; b < end; b += BlockEvaluator::kBlock) {
      const std::size_t m = std::min(BlockEvaluator::kBlock, end - b);
      ev.run(c.program(), cells.data() + b * stride, stride, m, out.data() + b);
    }
  });
  return out;
}

inline void require_same_schema(const Schema& expected, const Schema& got) {
  if (&expected != &got && !(expected == got)) throw DataError("dataset schema does not match the compiled schema");
}

inline std::vector<std::uint8_t> evaluate_batch(const CompiledConstraint& c, const Dataset& data) {
  require_same_schema(c.schema(), data.schema());
  return evaluate_cells(c, data.cells(), data.stride());
}

inline std::vector<std::uint8_t> evaluate_batch(const CompiledConstraint& c, std::span<const SemanticVector> rows) {
  std::vector<ValueIndex> cells;
  cells.reserve(rows.size() * c.schema().size());
  for (const auto& z : rows) {
    c.schema().validate(z.view());
    cells.insert(cells.end(), z.values.begin(), z.values.end());
  }
  return evaluate_cells(c, cells, c.schema().size());
}

// ---------------------------------------------------------------------------
// Constraint files
// ---------------------------------------------------------------------------

struct SourceLine {
  std::size_t line;  // 1-based
  std::string text;
};

// Non-empty, non-comment lines of a constraint file.
inline std::vector<SourceLine> split_constraint_lines(std::string_view text) {
  std::vector<SourceLine> out;
  std::size_t line = 0, pos = 0;
  while (pos <= text.size()) {
    ++line;
    auto nl = text.find('\n', pos);
    auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    auto body = raw.substr(0, raw.find('#'));
    const auto first = body.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) continue;
    const auto last = body.find_last_not_of(" \t\r");
    out.push_back({line, std::string(raw.substr(0, last + 1))});
  }
  return out;
}

// A knowledge-base line that failed to parse or compile, located by line and
// 1-based column (column 0 when the error has no source position).
class ConstraintFileError : public DataError {
 public:
  ConstraintFileError(std::size_t line, std::size_t column, const std::string& what)
      : DataError("line " + std::to_string(line) + (column ? ", column " + std::to_string(column) : std::string()) +
                  ": " + what),
        line_(line),
        column_(column) {}
  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_, column_;
};

inline CompiledConstraint compile_line(const SourceLine& src, std::shared_ptr<const Schema> schema, std::size_t id) {
  try {
    return compile(parse(src.text), std::move(schema), id);
  } catch (const SyntaxError& e) {
    throw ConstraintFileError(src.line, e.offset() + 1, e.what());
  } catch (const DataError& e) {
    throw ConstraintFileError(src.line, 0, e.what());
  }
}

inline std::vector<CompiledConstraint> compile_knowledge_base(std::string_view text,
                                                              const std::shared_ptr<const Schema>& schema) {
  std::vector<CompiledConstraint> kb;
  for (const auto& line : split_constraint_lines(text)) kb.push_back(compile_line(line, schema, kb.size()));
  return kb;
}

inline std::vector<CompiledConstraint> load_knowledge_base(const std::filesystem::path& path,
                                                           const std::shared_ptr<const Schema>& schema) {
  return compile_knowledge_base(io::read_file(path), schema);
}

inline std::string knowledge_base_text(std::span<const CompiledConstraint> kb) {
  std::string out;
  for (const auto& c : kb) out += c.text() + '\n';
  return out;
}

}  // namespace mlnood
