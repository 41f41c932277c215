// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "tractseg_cli/cli.hpp"

int main(int argc, char** argv) { return tractseg::cli::run(argc, argv, std::cout, std::cerr); }
