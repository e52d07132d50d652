#include "nmf/cli.hpp"

int main(int argc, char** argv) { return nmf::cli::run(argc, argv); }
