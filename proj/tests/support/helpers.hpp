#pragma once

#include <capbias/corpus.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace testing_support {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
  public:
    explicit TempDir(const std::string& tag);
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

  private:
    std::filesystem::path path_;
};

std::string slurp(const std::filesystem::path& p);
void spit(const std::filesystem::path& p, const std::string& text);

std::filesystem::path data_file(const std::string& name);

// Manifest over the bundled mini lexicon with synthetic image refs.
std::vector<capbias::Instance> mini_manifest(std::size_t per_cell);

} // namespace testing_support
