#include "faq_agg/embeddings.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace faq {

template <class T>
EmbeddingTable export_dynamic_queries(const FaqModel<T>& model, const std::vector<VideoClip>& clips,
                                      int frames_per_clip) {
  if (model.config().agg.mode != AggMode::dynamic) {
    throw ValidationError("export-embeddings needs a dynamic-mode model; mode '" + to_string(model.config().agg.mode) +
                          "' has input-independent queries");
  }
  ag::NoGradGuard guard;
  EmbeddingTable table;
  table.width = model.config().detr.width;
  const QuerySet<T> basic = model.basic_sets(1).front();
  for (const auto& clip : clips) {
    const int n = frames_per_clip > 0 ? std::min(frames_per_clip, clip.num_frames()) : clip.num_frames();
    for (int t = 0; t < n; ++t) {
      const FrameFeatures<T> f = model.features(clip.frames[static_cast<std::size_t>(t)]);
      const auto& agg = model.aggregator();
      const QuerySet<T> qd = agg.make_dynamic_queries(basic, agg.group_weights(f));
      const Tensor<T>& v = qd.vectors.value();
      for (int q = 0; q < qd.size(); ++q) {
        EmbeddingRow row{clip.id, t, q, std::vector<double>(static_cast<std::size_t>(table.width))};
        for (int k = 0; k < table.width; ++k) row.vec[static_cast<std::size_t>(k)] = static_cast<double>(v(q, k));
        table.rows.push_back(std::move(row));
      }
    }
  }
  return table;
}

void write_embedding_csv(const EmbeddingTable& table, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw StorageError("cannot write " + path.string());
  out << "clip_id,frame_id,query";
  for (int k = 0; k < table.width; ++k) out << ",e" << k;
  out << '\n';
  char buf[32];
  for (const auto& r : table.rows) {
    out << r.clip_id << ',' << r.frame << ',' << r.query;
    for (double v : r.vec) {
      std::snprintf(buf, sizeof buf, ",%.9g", v);
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw StorageError("failed writing " + path.string());
}

EmbeddingTable read_embedding_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": missing header");
  EmbeddingTable table;
  table.width = static_cast<int>(std::count(line.begin(), line.end(), ',')) - 2;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    EmbeddingRow row;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (static_cast<int>(cells.size()) != table.width + 3) {
      throw ParseError(path.string() + " line " + std::to_string(lineno) + ": wrong column count");
    }
    try {
      row.clip_id = cells[0];
      row.frame = std::stoi(cells[1]);
      row.query = std::stoi(cells[2]);
      for (std::size_t k = 3; k < cells.size(); ++k) row.vec.push_back(std::stod(cells[k]));
    } catch (const std::exception&) {
      throw ParseError(path.string() + " line " + std::to_string(lineno) + ": malformed number");
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

SimilarityGap similarity_gap(const EmbeddingTable& table, bool centered) {
  std::map<int, std::vector<const EmbeddingRow*>> by_query;
  for (const auto& r : table.rows) by_query[r.query].push_back(&r);
  SimilarityGap out;
  double intra = 0.0, inter = 0.0;
  for (const auto& [q, rows] : by_query) {
    const std::size_t w = static_cast<std::size_t>(table.width);
    std::vector<double> mean(w, 0.0);
    if (centered) {
      for (const auto* r : rows) {
        for (std::size_t k = 0; k < w; ++k) mean[k] += r->vec[k] / static_cast<double>(rows.size());
      }
    }
    std::vector<std::vector<double>> x;
    std::vector<double> norm;
    for (const auto* r : rows) {
      std::vector<double> v(w);
      double s = 0.0;
      for (std::size_t k = 0; k < w; ++k) {
        v[k] = r->vec[k] - mean[k];
        s += v[k] * v[k];
      }
      x.push_back(std::move(v));
      norm.push_back(std::sqrt(s));
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = i + 1; j < rows.size(); ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < w; ++k) dot += x[i][k] * x[j][k];
        const double denom = norm[i] * norm[j];
        const double c = denom > 0.0 ? dot / denom : 0.0;
        if (rows[i]->clip_id == rows[j]->clip_id) {
          intra += c;
          ++out.intra_pairs;
        } else {
          inter += c;
          ++out.inter_pairs;
        }
      }
    }
  }
  out.intra = out.intra_pairs ? intra / static_cast<double>(out.intra_pairs) : 0.0;
  out.inter = out.inter_pairs ? inter / static_cast<double>(out.inter_pairs) : 0.0;
  out.gap = out.intra - out.inter;
  return out;
}

void write_embedding_plot(const EmbeddingTable& table, const std::filesystem::path& path, std::size_t max_points,
                          const TsneOptions& options) {
  std::map<std::string, int> clip_label;
  std::vector<std::vector<double>> pts;
  std::vector<int> labels;
  const std::size_t stride = max_points > 0 && table.rows.size() > max_points
                                 ? (table.rows.size() + max_points - 1) / max_points
                                 : 1;
  for (std::size_t i = 0; i < table.rows.size(); i += stride) {
    const auto& r = table.rows[i];
    const auto it = clip_label.emplace(r.clip_id, static_cast<int>(clip_label.size())).first;
    pts.push_back(r.vec);
    labels.push_back(it->second);
  }
  write_scatter_png(path, tsne(pts, options), labels);
}

template EmbeddingTable export_dynamic_queries(const FaqModel<float>&, const std::vector<VideoClip>&, int);
template EmbeddingTable export_dynamic_queries(const FaqModel<double>&, const std::vector<VideoClip>&, int);

}  // namespace faq
