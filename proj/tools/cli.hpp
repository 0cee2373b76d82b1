#ifndef TSMT_TOOLS_CLI_HPP
#define TSMT_TOOLS_CLI_HPP

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace tsmt::cli {

/// Runs the command line tool; returns the process exit code.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

/// Flat key=value configuration: one pair per line, '#' starts a comment.
std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text,
                                                                  const std::string& source = "config");

}  // namespace tsmt::cli

#endif  // TSMT_TOOLS_CLI_HPP
