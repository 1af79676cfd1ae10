#include "compogauss/cli/run.hpp"

int main(int argc, char** argv) { return cg::cli::execute_command(argc, argv); }
