#include "wsds/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>

#include "wsds/errors.hpp"

namespace wsds {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return std::bit_cast<double>(v);
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError("truncated tensor table");
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_tensor_table(const std::map<std::string, Tensor>& table) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(table.size()));
  for (const auto& [name, t] : table) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
    for (double v : t.data()) put_f64(out, v);
  }
  return out;
}

std::map<std::string, Tensor> decode_tensor_table(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointError("missing WSDS magic");
  }
  Reader r(bytes);
  r.str(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported tensor table version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  std::map<std::string, Tensor> table;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank == 0) throw CheckpointError("record " + name + " has rank 0");
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& e : shape) {
      e = r.u32();
      if (e == 0) throw CheckpointError("record " + name + " has an empty extent");
      numel *= e;
    }
    std::vector<double> data(numel);
    for (double& v : data) v = r.f64();
    if (!table.emplace(name, Tensor(std::move(shape), std::move(data))).second) {
      throw CheckpointError("duplicate record " + name);
    }
  }
  if (!r.done()) throw CheckpointError("trailing bytes after tensor table");
  return table;
}

void write_tensor_table(const std::filesystem::path& path,
                        const std::map<std::string, Tensor>& table) {
  const auto bytes = encode_tensor_table(table);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

std::map<std::string, Tensor> read_tensor_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_tensor_table(bytes);
}

void save_checkpoint(const SegModel& model, const std::filesystem::path& path) {
  write_tensor_table(path, model.params());
}

void apply_parameters(SegModel& model, const std::map<std::string, Tensor>& table) {
  const ParamTable& current = model.params();
  if (table.size() != current.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(table.size()) +
                          " tensors, model expects " + std::to_string(current.size()));
  }
  for (const auto& [name, t] : current) {
    auto it = table.find(name);
    if (it == table.end()) throw CheckpointError("checkpoint lacks parameter " + name);
    if (it->second.shape() != t.shape()) {
      throw CheckpointError("shape mismatch for " + name + ": checkpoint " +
                            shape_str(it->second.shape()) + ", model " + shape_str(t.shape()));
    }
  }
  for (auto& [name, t] : model.params()) t = table.at(name);
}

void load_checkpoint(SegModel& model, const std::filesystem::path& path) {
  apply_parameters(model, read_tensor_table(path));
}

std::string fnv1a_hex(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string model_id(const SegModel& model) {
  return fnv1a_hex(encode_tensor_table(model.params()));
}

}  // namespace wsds
