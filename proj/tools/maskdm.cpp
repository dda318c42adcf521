#include <iostream>

#include "maskdm/cli.hpp"

int main(int argc, char** argv) {
    maskdm::tune_allocator();
    return maskdm::dispatch(argc, argv, std::cout, std::cerr);
}
