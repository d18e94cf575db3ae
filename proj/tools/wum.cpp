#include "wum/cli.hpp"

int main(int argc, char** argv) { return wum::cli::run(std::vector<std::string>(argv, argv + argc)); }
