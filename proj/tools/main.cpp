#include "camlmlab/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return camlmlab::cli_main(args);
}
