#include "bikop/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace bikop {

namespace {

constexpr char kMagic[8] = {'B', 'K', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& path) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError(path + ": corrupt checkpoint (truncated)");
  return v;
}

void write_str(std::ostream& os, const std::string& s) {
  write_pod<uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& is, const std::string& path) {
  uint64_t n = read_pod<uint64_t>(is, path);
  if (n > (1ull << 32)) throw IoError(path + ": corrupt checkpoint (bad string length)");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw IoError(path + ": corrupt checkpoint (truncated string)");
  return s;
}

}  // namespace

const Mat* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, m] : arrays) {
    if (n == name) return &m;
  }
  return nullptr;
}

Checkpoint snapshot_model(Model& model, const std::string& config_json,
                          const std::string& stage, const std::string& rng_state) {
  Checkpoint ck;
  ck.config_json = config_json;
  ck.stage = stage;
  ck.rng_state = rng_state;
  for (Param* p : model.all_params()) ck.arrays.emplace_back(p->name, p->value);
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint: " + path);
  os.write(kMagic, sizeof(kMagic));
  write_pod<uint32_t>(os, 1);  // version
  write_str(os, ck.stage);
  write_str(os, ck.config_json);
  write_str(os, ck.rng_state);
  write_pod<uint32_t>(os, static_cast<uint32_t>(ck.arrays.size()));
  for (const auto& [name, m] : ck.arrays) {
    write_str(os, name);
    write_pod<uint8_t>(os, 1);  // dtype: float64
    write_pod<uint32_t>(os, static_cast<uint32_t>(m.rows()));
    write_pod<uint32_t>(os, static_cast<uint32_t>(m.cols()));
    // row-major little-endian payload
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        double v = m(i, j);
        write_pod<double>(os, v);
      }
    }
  }
  if (!os) throw IoError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("missing checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw IoError(path + ": not a bikop checkpoint (bad magic)");
  }
  uint32_t version = read_pod<uint32_t>(is, path);
  if (version != 1) {
    throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.stage = read_str(is, path);
  ck.config_json = read_str(is, path);
  ck.rng_state = read_str(is, path);
  uint32_t n = read_pod<uint32_t>(is, path);
  for (uint32_t i = 0; i < n; ++i) {
    std::string name = read_str(is, path);
    uint8_t dtype = read_pod<uint8_t>(is, path);
    if (dtype != 1) throw IoError(path + ": unsupported dtype for array " + name);
    uint32_t rows = read_pod<uint32_t>(is, path);
    uint32_t cols = read_pod<uint32_t>(is, path);
    Mat m(rows, cols);
    for (uint32_t r = 0; r < rows; ++r) {
      for (uint32_t c = 0; c < cols; ++c) m(r, c) = read_pod<double>(is, path);
    }
    ck.arrays.emplace_back(std::move(name), std::move(m));
  }
  return ck;
}

void apply_checkpoint(const Checkpoint& ck, Model& model) {
  for (Param* p : model.all_params()) {
    const Mat* m = ck.find(p->name);
    if (!m) throw IoError("checkpoint is missing parameter '" + p->name + "'");
    if (m->rows() != p->value.rows() || m->cols() != p->value.cols()) {
      throw IoError("checkpoint parameter '" + p->name + "' has shape " +
                    std::to_string(m->rows()) + "x" + std::to_string(m->cols()) +
                    ", model expects " + std::to_string(p->value.rows()) + "x" +
                    std::to_string(p->value.cols()));
    }
    p->value = *m;
  }
}

int apply_checkpoint_prefix(const Checkpoint& ck, Model& model,
                            const std::vector<std::string>& prefixes) {
  int applied = 0;
  for (Param* p : model.all_params()) {
    bool wanted = false;
    for (const auto& pre : prefixes) {
      if (p->name.rfind(pre, 0) == 0) {
        wanted = true;
        break;
      }
    }
    if (!wanted) continue;
    const Mat* m = ck.find(p->name);
    if (!m) throw IoError("checkpoint is missing parameter '" + p->name + "'");
    if (m->rows() != p->value.rows() || m->cols() != p->value.cols()) {
      throw IoError("checkpoint parameter '" + p->name + "' shape mismatch");
    }
    p->value = *m;
    applied++;
  }
  return applied;
}

}  // namespace bikop
