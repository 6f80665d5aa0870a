#include "detailfusion/training/features.hpp"

#include <algorithm>

namespace dfusion {

Mat<float> vision_features(const DualEncoder<float>& encoder, const TripletDataset& ds, int batch_size) {
  const int P = encoder.config.num_patches();
  Mat<float> out(static_cast<Eigen::Index>(ds.gallery.size()) * P, encoder.config.width);
  for (std::size_t start = 0; start < ds.gallery.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(ds.gallery.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const Image*> imgs;
    for (std::size_t i = start; i < end; ++i) imgs.push_back(&ds.gallery[i].image);
    out.middleRows(static_cast<Eigen::Index>(start) * P, static_cast<Eigen::Index>(imgs.size()) * P) =
        encoder.vision_encode(imgs);
  }
  return out;
}

Mat<float> gather_rows(const Mat<float>& stacked, const std::vector<int>& ids, int rows_per_item) {
  Mat<float> out(static_cast<Eigen::Index>(ids.size()) * rows_per_item, stacked.cols());
  for (std::size_t i = 0; i < ids.size(); ++i)
    out.middleRows(static_cast<Eigen::Index>(i) * rows_per_item, rows_per_item) =
        stacked.middleRows(static_cast<Eigen::Index>(ids[i]) * rows_per_item, rows_per_item);
  return out;
}

Mat<float> cls_rows(const Mat<float>& tokens, int tokens_per_item) {
  const Eigen::Index n = tokens.rows() / tokens_per_item;
  Mat<float> out(n, tokens.cols());
  for (Eigen::Index i = 0; i < n; ++i) out.row(i) = tokens.row(i * tokens_per_item);
  return out;
}

EncodedSet encode_query_set(const DualEncoder<float>& encoder, const Mat<float>& vision, const TripletDataset& ds,
                            const std::vector<int>& triplets, Branch branch, int batch_size) {
  const int P = encoder.config.num_patches();
  const int K1 = encoder.config.num_tokens();
  EncodedSet out;
  out.tokens.resize(static_cast<Eigen::Index>(triplets.size()) * K1, encoder.config.feature_dim);
  for (std::size_t start = 0; start < triplets.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(triplets.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<int> refs;
    std::vector<std::vector<int>> texts;
    for (std::size_t i = start; i < end; ++i) {
      const Triplet& t = ds.triplets[static_cast<std::size_t>(triplets[i])];
      refs.push_back(t.reference_id);
      texts.push_back(t.tokens);
    }
    out.tokens.middleRows(static_cast<Eigen::Index>(start) * K1, static_cast<Eigen::Index>(refs.size()) * K1) =
        encoder.encode_queries(branch, gather_rows(vision, refs, P), texts);
  }
  out.cls = l2_normalize_rows(cls_rows(out.tokens, K1));
  return out;
}

EncodedSet encode_image_set(const DualEncoder<float>& encoder, const Mat<float>& vision, const std::vector<int>& ids,
                            int batch_size) {
  const int P = encoder.config.num_patches();
  const int K1 = encoder.config.num_tokens();
  EncodedSet out;
  out.tokens.resize(static_cast<Eigen::Index>(ids.size()) * K1, encoder.config.feature_dim);
  for (std::size_t start = 0; start < ids.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(ids.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<int> chunk(ids.begin() + static_cast<std::ptrdiff_t>(start), ids.begin() + static_cast<std::ptrdiff_t>(end));
    out.tokens.middleRows(static_cast<Eigen::Index>(start) * K1, static_cast<Eigen::Index>(chunk.size()) * K1) =
        encoder.encode_images(gather_rows(vision, chunk, P), static_cast<int>(chunk.size()));
  }
  out.cls = l2_normalize_rows(cls_rows(out.tokens, K1));
  return out;
}

}  // namespace dfusion
