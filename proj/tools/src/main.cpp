// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "gbt_cli/commands.hpp"

int main(int argc, char** argv) { return gbt::cli::run_cli(argc, argv, std::cout, std::cerr); }
