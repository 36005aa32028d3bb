#ifndef SYNSEG_TEST_UTIL_HPP
#define SYNSEG_TEST_UTIL_HPP

#include <atomic>
#include <filesystem>
#include <string>

// Unique scratch directory, removed on destruction.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("synseg_test_" + tag + "_" + std::to_string(counter.fetch_add(1)) + "_" +
            std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string str(const std::string& rel = "") const {
    return rel.empty() ? path.string() : (path / rel).string();
  }
};

#endif
