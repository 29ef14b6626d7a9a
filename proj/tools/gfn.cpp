#include "gfn/cli.hpp"

int main(int argc, char** argv) { return gfn::cli::run(argc, argv); }
