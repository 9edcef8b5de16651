// make_fixture <root> <per-category> <category>...
#include <cstdio>
#include <string>
#include <vector>

#include "support.hpp"

int main(int argc, char** argv) {
    if (argc < 4) {
        std::fprintf(stderr, "usage: make_fixture <root> <per-category> <category>...\n");
        return 2;
    }
    std::vector<std::string> cats(argv + 3, argv + argc);
    testing::make_fixture(argv[1], cats, std::stoul(argv[2]));
    return 0;
}
