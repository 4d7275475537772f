#pragma once

// Helpers shared by the subprocess plugins (encoder and segmenter).

#include <filesystem>
#include <string>
#include <utility>

namespace fmbench::detail {

std::filesystem::path make_temp_dir();

struct TempDir {
  std::filesystem::path path = make_temp_dir();
  TempDir() = default;
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  ~TempDir();
};

std::string shell_quote(const std::string& s);

// Runs a shell command; returns (exit status, captured stdout).
std::pair<int, std::string> run_command(const std::string& command);

}  // namespace fmbench::detail
