// SPDX-License-Identifier: Apache-2.0
#include <string>
#include <vector>

#include "emforge/commands.hpp"

int main(int argc, char** argv) { return emforge::cli::run(std::vector<std::string>(argv, argv + argc)); }
