#include "wnp/cli.hpp"

int main(int argc, char** argv) { return wnp::cli::run(argc, argv); }
