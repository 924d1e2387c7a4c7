#pragma once

#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "gradcheck.hpp"

namespace testing_support {

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  std::string tag = name;
  if (info) tag += std::string("_") + info->test_suite_name() + "_" + info->name();
  const auto dir = std::filesystem::temp_directory_path() / ("ssimfuse_test_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing_support
