#include "cli.hpp"

int main(int argc, char** argv) { return gpsmatch::cli::run(argc, argv); }
