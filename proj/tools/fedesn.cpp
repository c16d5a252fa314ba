#include "fedesn/cli.hpp"

int main(int argc, char** argv) { return fedesn::cli::cli_main(argc, argv); }
