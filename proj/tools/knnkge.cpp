#include <string>
#include <vector>

#include "knnkge/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return knnkge::run_cli(args);
}
