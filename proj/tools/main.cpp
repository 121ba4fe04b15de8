#include "cli.hpp"

int main(int argc, char** argv) { return netgrowth::cli::run(argc, argv); }
