#include "cli.hpp"

int main(int argc, char** argv) { return mlnood::cli::run(argc, argv); }
