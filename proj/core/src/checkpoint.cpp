#include <cstring>
#include <fstream>

#include "patchforge/train.hpp"

namespace patchforge::train {

namespace {

constexpr char kHeaderMagic[8] = {'P', 'F', 'C', 'K', 'P', 'T', '0', '1'};
constexpr char kFooterMagic[8] = {'P', 'F', 'E', 'N', 'D', 'C', 'K', '1'};

void put_bytes(std::ofstream& out, const void* p, size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void put_u32(std::ofstream& out, uint32_t v) { put_bytes(out, &v, sizeof v); }
void put_u64(std::ofstream& out, uint64_t v) { put_bytes(out, &v, sizeof v); }
void put_i64(std::ofstream& out, int64_t v) { put_bytes(out, &v, sizeof v); }

void put_string(std::ofstream& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  put_bytes(out, s.data(), s.size());
}

void put_tensor_record(std::ofstream& out, const std::string& name, const Tensor& t) {
  put_string(out, name);
  put_u32(out, static_cast<uint32_t>(t.rank()));
  for (int d = 0; d < t.rank(); ++d) put_i64(out, t.dim(d));
  put_bytes(out, t.data(), static_cast<size_t>(t.numel()) * sizeof(double));
}

struct Reader {
  std::ifstream in;
  std::string file;

  void get_bytes(void* p, size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n))
      fail(strfmt("corrupt checkpoint '%s': unexpected end of file", file.c_str()));
  }
  uint32_t get_u32() {
    uint32_t v;
    get_bytes(&v, sizeof v);
    return v;
  }
  uint64_t get_u64() {
    uint64_t v;
    get_bytes(&v, sizeof v);
    return v;
  }
  int64_t get_i64() {
    int64_t v;
    get_bytes(&v, sizeof v);
    return v;
  }
  std::string get_string(size_t max_len = 1u << 20) {
    const uint32_t n = get_u32();
    if (n > max_len) fail(strfmt("corrupt checkpoint '%s': implausible string length", file.c_str()));
    std::string s(n, '\0');
    get_bytes(s.data(), n);
    return s;
  }
  std::pair<std::string, Tensor> get_tensor_record() {
    std::string name = get_string();
    const uint32_t rank = get_u32();
    if (rank < 1 || rank > 4) fail(strfmt("corrupt checkpoint '%s': bad tensor rank", file.c_str()));
    std::vector<int64_t> dims;
    int64_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      const int64_t v = get_i64();
      if (v < 1 || v > (int64_t{1} << 32))
        fail(strfmt("corrupt checkpoint '%s': bad tensor dimension", file.c_str()));
      dims.push_back(v);
      numel *= v;
    }
    if (numel > (int64_t{1} << 34))
      fail(strfmt("corrupt checkpoint '%s': implausible tensor size", file.c_str()));
    Tensor t(dims);
    get_bytes(t.data(), static_cast<size_t>(numel) * sizeof(double));
    return {std::move(name), std::move(t)};
  }
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) fail(strfmt("cannot write checkpoint '%s'", file.string().c_str()));
  put_bytes(out, kHeaderMagic, sizeof kHeaderMagic);
  put_u64(out, ckpt.arch_fingerprint);
  put_i64(out, ckpt.step);
  put_string(out, ckpt.rng_state);
  put_u32(out, static_cast<uint32_t>(ckpt.meta.size()));
  for (const auto& [k, v] : ckpt.meta) {
    put_string(out, k);
    put_string(out, v);
  }
  put_u32(out, static_cast<uint32_t>(ckpt.params.size()));
  for (const auto& [name, t] : ckpt.params) put_tensor_record(out, name, t);
  put_u32(out, static_cast<uint32_t>(ckpt.opt_state.size()));
  for (const auto& [name, t] : ckpt.opt_state) put_tensor_record(out, name, t);
  put_bytes(out, kFooterMagic, sizeof kFooterMagic);
  out.flush();
  if (!out) fail(strfmt("failed writing checkpoint '%s'", file.string().c_str()));
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  Reader r;
  r.file = file.string();
  r.in.open(file, std::ios::binary);
  if (!r.in) fail(strfmt("cannot open checkpoint '%s'", r.file.c_str()));

  char magic[8];
  r.get_bytes(magic, sizeof magic);
  if (std::memcmp(magic, kHeaderMagic, sizeof magic) != 0)
    fail(strfmt("corrupt checkpoint '%s': bad header magic", r.file.c_str()));

  Checkpoint ckpt;
  ckpt.arch_fingerprint = r.get_u64();
  ckpt.step = r.get_i64();
  ckpt.rng_state = r.get_string(1u << 16);
  const uint32_t n_meta = r.get_u32();
  if (n_meta > 1024) fail(strfmt("corrupt checkpoint '%s': implausible metadata count", r.file.c_str()));
  for (uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.get_string();
    std::string v = r.get_string();
    ckpt.meta.emplace_back(std::move(k), std::move(v));
  }
  const uint32_t n_params = r.get_u32();
  for (uint32_t i = 0; i < n_params; ++i) ckpt.params.push_back(r.get_tensor_record());
  const uint32_t n_opt = r.get_u32();
  for (uint32_t i = 0; i < n_opt; ++i) ckpt.opt_state.push_back(r.get_tensor_record());

  r.get_bytes(magic, sizeof magic);
  if (std::memcmp(magic, kFooterMagic, sizeof magic) != 0)
    fail(strfmt("corrupt checkpoint '%s': bad footer magic (truncated file?)", r.file.c_str()));
  char extra;
  r.in.read(&extra, 1);
  if (!r.in.eof()) fail(strfmt("corrupt checkpoint '%s': trailing bytes", r.file.c_str()));
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& file, uint64_t expected_fingerprint) {
  Checkpoint ckpt = load_checkpoint(file);
  if (ckpt.arch_fingerprint != expected_fingerprint)
    fail(strfmt("checkpoint '%s': architecture fingerprint mismatch (file %016llx, expected %016llx)",
                file.string().c_str(), static_cast<unsigned long long>(ckpt.arch_fingerprint),
                static_cast<unsigned long long>(expected_fingerprint)));
  return ckpt;
}

}  // namespace patchforge::train
