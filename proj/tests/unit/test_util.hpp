#pragma once

#include <filesystem>
#include <string>

namespace test_util {

// Fresh per-test directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const std::filesystem::path dir = std::filesystem::path(DPPT_TEST_DATA_DIR) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace test_util
