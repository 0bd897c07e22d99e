#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include <unistd.h>

#include <Eigen/Dense>

namespace testutil {

// Fresh file under the system temp dir, removed on scope exit.
class TempFile {
 public:
  explicit TempFile(const std::string& stem) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("emlasso_" + stem + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  }
  TempFile(const std::string& stem, const std::string& contents) : TempFile(stem) { write(contents); }
  ~TempFile() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  TempFile(const TempFile&) = delete;
  TempFile& operator=(const TempFile&) = delete;

  void write(const std::string& contents) const {
    std::ofstream out(path_, std::ios::binary);
    out << contents;
  }
  std::string read() const {
    std::ifstream in(path_, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  }
  const std::filesystem::path& path() const { return path_; }
  std::string str() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

inline Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = z(rng);
  return m;
}

inline Eigen::VectorXd gaussian_vector(Eigen::Index n, std::mt19937_64& rng) {
  return gaussian_matrix(n, 1, rng).col(0);
}

}  // namespace testutil
