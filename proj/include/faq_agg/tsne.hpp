#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace faq {

struct TsneOptions {
  double perplexity = 30.0;
  int iterations = 750;
  double learning_rate = 200.0;
  std::uint64_t seed = 0;
};

/// Exact (O(n^2)) t-SNE projection to two dimensions.
std::vector<std::array<double, 2>> tsne(const std::vector<std::vector<double>>& points, const TsneOptions& options);

/// Scatter plot with one color per label, written as an RGB PNG.
void write_scatter_png(const std::filesystem::path& path, const std::vector<std::array<double, 2>>& points,
                       const std::vector<int>& labels, int size = 512);

}  // namespace faq
