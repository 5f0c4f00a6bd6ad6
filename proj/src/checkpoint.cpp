#include "expt/checkpoint.hpp"

#include <bit>
#include <boost/crc.hpp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <type_traits>

#include "expt/errors.hpp"

namespace expt::checkpoint {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'E', 'X', 'P', 'T'};
constexpr const char* kMetaPrefix = "meta:";

template <typename U>
void put(std::vector<unsigned char>& out, U v) {
  unsigned char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.insert(out.end(), buf, buf + sizeof(U));
}

class Reader {
 public:
  Reader(const unsigned char* data, std::size_t size) : data_(data), size_(size) {}
  template <typename U>
  U get() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, data_ + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  void bytes(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, data_ + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == size_; }

 private:
  void need(std::size_t n) const {
    if (n > size_ - pos_) throw CheckpointError(CheckpointErrorKind::kTruncated, "checkpoint: unexpected end of data");
  }
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::kFloat32: return 4;
    case DType::kFloat64: return 8;
  }
  throw CheckpointError(CheckpointErrorKind::kTruncated, "checkpoint: unknown dtype");
}

template <typename T>
constexpr DType dtype_of() {
  return std::is_same_v<T, float> ? DType::kFloat32 : DType::kFloat64;
}

template <typename T>
Record make_record(const std::string& name, std::span<const T> values, std::vector<std::uint64_t> dims) {
  Record r;
  r.name = name;
  r.dtype = dtype_of<T>();
  r.dims = std::move(dims);
  r.data.resize(values.size() * sizeof(T));
  if (!values.empty()) std::memcpy(r.data.data(), values.data(), r.data.size());
  return r;
}

template <typename T>
void copy_into(const Record& r, std::span<T> dst, const std::vector<std::uint64_t>& dims) {
  if (r.dtype != dtype_of<T>() || r.dims != dims || r.data.size() != dst.size() * sizeof(T)) {
    std::string want, got;
    for (auto d : dims) want += (want.empty() ? "" : "x") + std::to_string(d);
    for (auto d : r.dims) got += (got.empty() ? "" : "x") + std::to_string(d);
    throw CheckpointError(CheckpointErrorKind::kMissingTensor,
                          "checkpoint: tensor '" + r.name + "' has shape " + got + " (dtype " +
                              std::to_string(int(r.dtype)) + "), expected " + want + " (dtype " +
                              std::to_string(int(dtype_of<T>())) + ")");
  }
  if (!dst.empty()) std::memcpy(dst.data(), r.data.data(), r.data.size());
}

Metadata metadata_of(const std::vector<Record>& records) {
  Metadata m;
  for (const auto& r : records) {
    if (r.name.rfind(kMetaPrefix, 0) != 0) continue;
    const std::string rest = r.name.substr(std::strlen(kMetaPrefix));
    const auto colon = rest.find(':');
    if (colon == std::string::npos) continue;
    const std::string key = rest.substr(0, colon), value = rest.substr(colon + 1);
    if (key == "config_hash") m.config_hash = value;
    else if (key == "model_kind") m.model_kind = value;
    else if (key == "step") m.step = std::stoll(value);
  }
  return m;
}

Record meta_record(const std::string& key, const std::string& value) {
  Record r;
  r.name = std::string(kMetaPrefix) + key + ":" + value;
  r.dtype = DType::kFloat64;
  r.dims = {0};
  return r;
}

}  // namespace

std::uint64_t Record::element_count() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::uint64_t crc64(const unsigned char* data, std::size_t size) {
  boost::crc_optimal<64, 0x42F0E1EBA9EA3693ULL, ~0ULL, ~0ULL, true, true> crc;
  crc.process_bytes(data, size);
  return crc.checksum();
}

std::vector<unsigned char> encode(const std::vector<Record>& records) {
  std::vector<unsigned char> out(kMagic, kMagic + 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    if (r.data.size() != r.element_count() * dtype_size(r.dtype))
      throw InputError("checkpoint: tensor '" + r.name + "' data size does not match its dims");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(r.dtype));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.dims.size()));
    for (auto d : r.dims) put<std::uint64_t>(out, d);
    out.insert(out.end(), r.data.begin(), r.data.end());
  }
  put<std::uint64_t>(out, crc64(out.data(), out.size()));
  return out;
}

std::vector<Record> decode(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw CheckpointError(CheckpointErrorKind::kBadMagic, "checkpoint: bad magic (not an EXPT checkpoint)");
  if (bytes.size() < 8)
    throw CheckpointError(CheckpointErrorKind::kTruncated, "checkpoint: file ends inside the header");
  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  if (version != kVersion)
    throw CheckpointError(CheckpointErrorKind::kVersionMismatch, "checkpoint: version " + std::to_string(version) +
                                                                     " but this reader supports version " +
                                                                     std::to_string(kVersion));
  if (bytes.size() < 20) throw CheckpointError(CheckpointErrorKind::kCrcMismatch, "checkpoint: CRC mismatch (file too short)");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + body, 8);
  if (crc64(bytes.data(), body) != stored)
    throw CheckpointError(CheckpointErrorKind::kCrcMismatch, "checkpoint: CRC mismatch (corrupt or truncated file)");

  Reader in(bytes.data() + 8, body - 8);
  const auto count = in.get<std::uint32_t>();
  std::vector<Record> records;
  records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Record r;
    r.name.resize(in.get<std::uint32_t>());
    in.bytes(r.name.data(), r.name.size());
    const auto dtype = in.get<std::uint8_t>();
    if (dtype != 1 && dtype != 2)
      throw CheckpointError(CheckpointErrorKind::kTruncated, "checkpoint: tensor '" + r.name + "' has unknown dtype");
    r.dtype = static_cast<DType>(dtype);
    r.dims.resize(in.get<std::uint32_t>());
    for (auto& d : r.dims) d = in.get<std::uint64_t>();
    r.data.resize(r.element_count() * dtype_size(r.dtype));
    in.bytes(r.data.data(), r.data.size());
    records.push_back(std::move(r));
  }
  if (!in.done()) throw CheckpointError(CheckpointErrorKind::kTruncated, "checkpoint: trailing bytes after tensors");
  return records;
}

void write_file(const std::string& path, const std::vector<Record>& records) {
  const auto bytes = encode(records);
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to checkpoint " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

std::vector<Record> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

template <typename T>
void save(const std::string& path, const nn::ParameterStore<T>& params, const nn::OptimizerState<T>* state,
          const Metadata& meta) {
  std::vector<Record> records;
  const auto& entries = params.entries();
  for (const auto& [name, t] : entries) records.push_back(make_record<T>(name, t.values(), {t.rows(), t.cols()}));
  if (state) {
    if (state->first_moment.size() != entries.size())
      throw InputError("checkpoint: optimizer state does not match the parameter list");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& t = entries[i].second;
      records.push_back(make_record<T>("adam.m/" + entries[i].first, std::span<const T>(state->first_moment[i]),
                                       {t.rows(), t.cols()}));
      records.push_back(make_record<T>("adam.v/" + entries[i].first, std::span<const T>(state->second_moment[i]),
                                       {t.rows(), t.cols()}));
    }
    const double step = static_cast<double>(state->step);
    records.push_back(make_record<double>("adam.t", std::span<const double>(&step, 1), {1}));
  }
  records.push_back(meta_record("config_hash", meta.config_hash));
  records.push_back(meta_record("model_kind", meta.model_kind));
  records.push_back(meta_record("step", std::to_string(meta.step)));
  write_file(path, records);
}

template <typename T>
Metadata load(const std::string& path, nn::ParameterStore<T>& params, nn::OptimizerState<T>* state) {
  const auto records = read_file(path);
  std::map<std::string, const Record*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;
  auto find = [&](const std::string& name) -> const Record& {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw CheckpointError(CheckpointErrorKind::kMissingTensor, "checkpoint " + path + ": missing tensor '" + name + "'");
    return *it->second;
  };
  auto entries = params.entries();
  for (auto& [name, t] : entries) copy_into<T>(find(name), t.values(), {t.rows(), t.cols()});
  if (state) {
    std::vector<std::vector<T>> m, v;
    for (auto& [name, t] : entries) {
      m.emplace_back(t.size());
      v.emplace_back(t.size());
      copy_into<T>(find("adam.m/" + name), std::span<T>(m.back()), {t.rows(), t.cols()});
      copy_into<T>(find("adam.v/" + name), std::span<T>(v.back()), {t.rows(), t.cols()});
    }
    double step = 0.0;
    copy_into<double>(find("adam.t"), std::span<double>(&step, 1), {1});
    state->first_moment = std::move(m);
    state->second_moment = std::move(v);
    state->step = static_cast<std::int64_t>(step);
  }
  return metadata_of(records);
}

Metadata read_metadata(const std::string& path) { return metadata_of(read_file(path)); }

template void save<float>(const std::string&, const nn::ParameterStore<float>&, const nn::OptimizerState<float>*,
                          const Metadata&);
template void save<double>(const std::string&, const nn::ParameterStore<double>&, const nn::OptimizerState<double>*,
                           const Metadata&);
template Metadata load<float>(const std::string&, nn::ParameterStore<float>&, nn::OptimizerState<float>*);
template Metadata load<double>(const std::string&, nn::ParameterStore<double>&, nn::OptimizerState<double>*);

}  // namespace expt::checkpoint
