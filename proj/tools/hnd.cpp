#include "hnd/cli.hpp"

int main(int argc, char** argv) { return hnd::cli::run(argc, argv); }
