#include <iostream>

#include "mscure/cli.hpp"

int main(int argc, char** argv) {
    return mscure::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
