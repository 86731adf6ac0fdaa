#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bikop/common.hpp"
#include "bikop/rng.hpp"

namespace bikop {

struct DataConfig {
  int image_size = 32;        // square images, image_size x image_size x channels
  int channels = 3;
  int patch_size = 8;
  int n_base = 20;
  int n_val = 5;
  int n_novel = 10;
  int images_per_class = 200;
  int n_shapes = 7;           // shape generator ids [0, n_shapes)
  int n_palettes = 8;         // palette generator ids [0, n_palettes)
  uint64_t master_seed = 1234;

  int n_classes() const { return n_base + n_val + n_novel; }
  void validate() const;
};

/// One synthetic class: a (shape, palette) pair. The 2-token compositional
/// name is a pure function of the generator params.
struct ClassSpec {
  int class_id = 0;
  int shape = 0;
  int palette = 0;
  int split = 0;  // 0 base, 1 val, 2 novel

  std::vector<int> name_tokens(int n_shapes) const { return {shape, n_shapes + palette}; }
};

enum class Split { Base = 0, Val = 1, Novel = 2 };

const char* split_name(Split s);
Split split_from_name(const std::string& s);

struct Dataset {
  DataConfig config;
  std::vector<ClassSpec> classes;
  std::vector<float> images;              // n_images * H * W * C, row-major HWC per image
  std::vector<int> image_class;           // class id per image row
  std::vector<std::vector<int>> splits;   // class ids per split

  int n_images() const { return static_cast<int>(image_class.size()); }
  int image_floats() const { return config.image_size * config.image_size * config.channels; }
  const float* image(int row) const { return images.data() + size_t(row) * image_floats(); }
  /// Image row index for the k-th image of a class.
  int image_row(int class_id, int k) const { return class_id * config.images_per_class + k; }
  const std::vector<int>& split_classes(Split s) const {
    return splits[static_cast<size_t>(s)];
  }
  std::vector<int> class_name_tokens(int class_id) const;
  int vocab_size() const { return config.n_shapes + config.n_palettes; }

  /// Image converted to doubles in [0,1], as a flat H*W*C vector.
  Vec image_as_vec(int row) const;
};

/// Deterministic procedural dataset: class identities, splits and every pixel
/// are pure functions of the config. Same config => byte-identical images.
Dataset generate_dataset(const DataConfig& config);

struct SupportItem {
  int image_row;
  int label;     // episode label in [0, N)
  int class_id;  // dataset class id
};

struct QueryItem {
  int image_row;
  int label;
};

struct Episode {
  std::vector<SupportItem> support;  // N*K items, grouped by draw order
  std::vector<QueryItem> query;      // N*Q items
  std::vector<int> class_ids;        // label -> dataset class id
  std::vector<int> slot_of_label;    // label -> prompt slot (identity by default)
  int n_way = 0;
  int k_shot = 0;
  int n_query = 0;
};

/// Draws N classes without replacement, then K support + Q query images per
/// class without replacement. Episode labels follow draw order.
Episode sample_episode(const Dataset& ds, Split split, int n_way, int k_shot, int n_query,
                       Rng& rng);

uint64_t episode_hash(const Episode& ep);

void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace bikop
