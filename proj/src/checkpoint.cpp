#include "agpi/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "agpi/error.hpp"

namespace agpi {
namespace {

constexpr char kMagic[8] = {'A', 'G', 'P', 'I', 'C', 'K', 'P', 'T'};

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw CheckpointError("checkpoint is truncated or corrupt");
  }
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

std::map<std::string, Tensor> CheckpointFile::tensors_under(const std::string& prefix) const {
  std::map<std::string, Tensor> out;
  const std::string p = prefix + ".";
  for (auto it = tensors.lower_bound(p); it != tensors.end() && it->first.rfind(p, 0) == 0; ++it) {
    out.emplace(it->first.substr(p.size()), it->second);
  }
  return out;
}

void CheckpointFile::put_tensors(const std::string& prefix,
                                 const std::map<std::string, Tensor>& values) {
  for (const auto& [k, v] : values) tensors[prefix + "." + k] = v;
}

std::string serialize_checkpoint(const CheckpointFile& file) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, file.version);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(file.tensors.size() + file.texts.size()));
  // Merge both maps in global name order.
  auto t = file.tensors.begin();
  auto s = file.texts.begin();
  while (t != file.tensors.end() || s != file.texts.end()) {
    const bool take_tensor = s == file.texts.end() || (t != file.tensors.end() && t->first < s->first);
    const std::string& name = take_tensor ? t->first : s->first;
    put<std::uint8_t>(out, take_tensor ? 0 : 1);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    if (take_tensor) {
      const Tensor& v = t->second;
      put<std::uint32_t>(out, static_cast<std::uint32_t>(v.rank()));
      for (int d : v.shape()) put<std::int64_t>(out, d);
      out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
      ++t;
    } else {
      put<std::uint64_t>(out, s->second.size());
      out += s->second;
      ++s;
    }
  }
  put<std::uint64_t>(out, fnv1a(out.data(), out.size()));
  return out;
}

CheckpointFile parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) + 8 + 8) throw CheckpointError("checkpoint is truncated or corrupt");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  const std::size_t body = bytes.size() - 8;
  Reader r(bytes, body);
  r.get_string(sizeof(kMagic));
  CheckpointFile file;
  file.version = r.get<std::uint32_t>();
  if (file.version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(file.version) +
                          " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, 8);
  if (stored != fnv1a(bytes.data(), body)) throw CheckpointError("checkpoint is truncated or corrupt");
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto kind = r.get<std::uint8_t>();
    const std::string name = r.get_string(r.get<std::uint32_t>());
    if (kind == 0) {
      const auto rank = r.get<std::uint32_t>();
      if (rank > 8) throw CheckpointError("checkpoint is truncated or corrupt");
      Shape shape;
      for (std::uint32_t i = 0; i < rank; ++i) {
        const auto d = r.get<std::int64_t>();
        if (d < 0 || d > (1LL << 31)) throw CheckpointError("checkpoint is truncated or corrupt");
        shape.push_back(static_cast<int>(d));
      }
      const std::size_t n = shape_size(shape);
      const std::string raw = r.get_string(n * sizeof(double));
      std::vector<double> values(n);
      std::memcpy(values.data(), raw.data(), raw.size());
      file.tensors.emplace(name, Tensor(std::move(shape), std::move(values)));
    } else if (kind == 1) {
      file.texts.emplace(name, r.get_string(r.get<std::uint64_t>()));
    } else {
      throw CheckpointError("checkpoint is truncated or corrupt");
    }
  }
  if (r.pos() != body) throw CheckpointError("checkpoint is truncated or corrupt");
  return file;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file) {
  const std::string bytes = serialize_checkpoint(file);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw LoadError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace agpi
