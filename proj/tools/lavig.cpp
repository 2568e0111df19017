#include "lavig/cli.hpp"

int main(int argc, char** argv) { return lavig::cli::main(argc, argv); }
