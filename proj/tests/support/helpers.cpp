#include "helpers.hpp"

#include <atomic>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unistd.h>

namespace testing_support {

TempDir::TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("capbias-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

std::filesystem::path data_file(const std::string& name) { return std::filesystem::path(CAPBIAS_DATA_DIR) / name; }

std::vector<capbias::Instance> mini_manifest(std::size_t per_cell) {
    const auto concepts = capbias::bundled_mini_lexicon().concepts();
    const auto images = capbias::synthesize_images(concepts, per_cell);
    return capbias::build_manifest(concepts, capbias::kGenders, images);
}

} // namespace testing_support
