#include "vhash/cli.hpp"

int main(int argc, char** argv) { return vhash::cli::run(argc, argv); }
