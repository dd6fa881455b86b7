#include <string>
#include <vector>

#include "vflhlp/cli.hpp"

int main(int argc, char** argv) {
    return vflhlp::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
