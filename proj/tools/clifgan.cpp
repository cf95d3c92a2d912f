#include <string>
#include <vector>

#include "clifgan/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return clifgan::cli::run(args);
}
