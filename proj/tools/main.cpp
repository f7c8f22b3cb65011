#include "specenc/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
    return specenc::cli::run(argc, argv, std::cout, std::cerr);
}
