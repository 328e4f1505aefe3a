#include "lecnav/cli.hpp"

int main(int argc, char** argv) { return lecnav::cli::main_impl(argc, argv); }
