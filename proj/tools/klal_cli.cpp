#include "klal/cli.hpp"

int main(int argc, char** argv) {
    return klal::run_cli(argc, argv);
}
