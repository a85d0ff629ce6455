#include <sgic/cli.hpp>

int main(int argc, char **argv) { return sgic::cli::main_with_args(argc, argv); }
