#pragma once

#include <vector>

#include "detailfusion/data/dataset.hpp"
#include "detailfusion/encoders/encoders.hpp"

namespace dfusion {

// Vision features of every gallery image, stacked in id order:
// rows [id * P, (id + 1) * P).
Mat<float> vision_features(const DualEncoder<float>& encoder, const TripletDataset& ds, int batch_size = 256);

// Stacks `rows_per_item` consecutive rows for each id.
Mat<float> gather_rows(const Mat<float>& stacked, const std::vector<int>& ids, int rows_per_item);

// Row 0 of each (K + 1)-token block.
Mat<float> cls_rows(const Mat<float>& tokens, int tokens_per_item);

struct EncodedSet {
  Mat<float> tokens;  // (N * (K + 1)) x d, raw
  Mat<float> cls;     // N x d, unit norm
};

// Queries (reference + text) of the given triplets through one branch.
EncodedSet encode_query_set(const DualEncoder<float>& encoder, const Mat<float>& vision, const TripletDataset& ds,
                            const std::vector<int>& triplets, Branch branch, int batch_size = 64);

// Images through the DI image path.
EncodedSet encode_image_set(const DualEncoder<float>& encoder, const Mat<float>& vision, const std::vector<int>& ids,
                            int batch_size = 64);

}  // namespace dfusion
