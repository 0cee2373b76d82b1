#include "cli.hpp"

int main(int argc, char** argv) { return tsmt::cli::run(argc, argv); }
