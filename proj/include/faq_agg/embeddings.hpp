#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "faq_agg/model.hpp"
#include "faq_agg/tsne.hpp"

namespace faq {

struct EmbeddingRow {
  std::string clip_id;
  int frame = 0;
  int query = 0;
  std::vector<double> vec;
};

struct EmbeddingTable {
  int width = 0;
  std::vector<EmbeddingRow> rows;
};

/// The m dynamic queries Q_i^d of every exported frame. `frames_per_clip`
/// keeps the first n frames of each clip (0 keeps all). Only dynamic-mode
/// models have frame-dependent queries; other modes throw ValidationError.
template <class T>
EmbeddingTable export_dynamic_queries(const FaqModel<T>& model, const std::vector<VideoClip>& clips,
                                      int frames_per_clip = 0);

void write_embedding_csv(const EmbeddingTable& table, const std::filesystem::path& path);
EmbeddingTable read_embedding_csv(const std::filesystem::path& path);

struct SimilarityGap {
  double intra = 0.0;  // mean cosine between frames of the same clip
  double inter = 0.0;  // mean cosine between frames of different clips
  double gap = 0.0;    // intra - inter
  std::size_t intra_pairs = 0;
  std::size_t inter_pairs = 0;
};

/// Compares rows with the same query index. With `centered`, each query
/// index's mean over all rows is subtracted first, so the input-independent
/// part shared by every frame does not dominate the cosine.
SimilarityGap similarity_gap(const EmbeddingTable& table, bool centered = true);

/// t-SNE of the table rows colored by clip; at most `max_points` rows are
/// projected (evenly strided).
void write_embedding_plot(const EmbeddingTable& table, const std::filesystem::path& path, std::size_t max_points,
                          const TsneOptions& options);

}  // namespace faq
