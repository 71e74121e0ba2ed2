#include "bem/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "bem/config.hpp"
#include "bem/errors.hpp"

namespace bem::checkpoint {

namespace {

constexpr char kMagic[4] = {'B', 'E', 'M', 'C'};

class Writer {
public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void i64(std::int64_t v) { put(static_cast<std::uint64_t>(v), 8); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void bytes(std::string_view s) {
    u64(s.size());
    out_.append(s);
  }
  void f32s(std::span<const float> v) {
    u64(v.size());
    for (float x : v) f32(x);
  }
  void f64s(std::span<const double> v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  std::string take() {
    std::string r;
    r.swap(out_);
    return r;
  }

private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string out_;
};

class Reader {
public:
  Reader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  std::int64_t i64() { return static_cast<std::int64_t>(get(8)); }
  float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(get(4))); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::string_view raw(std::size_t n) {
    need(n);
    std::string_view s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string bytes() { return std::string(raw(u64())); }
  std::vector<float> f32s() {
    const std::uint64_t n = u64();
    need(n * 4);
    std::vector<float> v(n);
    for (auto& x : v) x = f32();
    return v;
  }
  std::vector<double> f64s() {
    const std::uint64_t n = u64();
    need(n * 8);
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  bool done() const { return pos_ == data_.size(); }

private:
  void need(std::uint64_t n) const {
    if (n > data_.size() - pos_) throw IoError(what_ + ": truncated data");
  }
  std::uint64_t get(int n) {
    need(n);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += n;
    return v;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::string rng_text(const Rng& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

void rng_from_text(Rng& rng, const std::string& text) {
  std::istringstream ss(text);
  ss >> rng;
  if (!ss) throw IoError("checkpoint: malformed rng state");
}

std::string encode_params(const nn::BackboneParams& params) {
  Writer w;
  for_each_tensor(params, [&](const std::string& name, std::span<const float> t) {
    w.bytes(name);
    w.f32s(t);
  });
  return w.take();
}

void decode_params(nn::BackboneParams& params, std::string_view payload) {
  Reader r(payload, "checkpoint params");
  for_each_tensor(params, [&](const std::string& name, std::span<float> t) {
    if (r.bytes() != name) throw IoError("checkpoint params: tensor order mismatch at " + name);
    const std::vector<float> v = r.f32s();
    if (v.size() != t.size()) throw IoError("checkpoint params: size mismatch for " + name);
    std::copy(v.begin(), v.end(), t.begin());
  });
  if (!r.done()) throw IoError("checkpoint params: trailing data");
}

std::string encode_sampler(learner::BatchSampler& s) {
  Writer w;
  w.u64(s.order().size());
  for (int i : s.order()) w.u32(static_cast<std::uint32_t>(i));
  w.u64(s.cursor());
  w.bytes(rng_text(s.rng()));
  return w.take();
}

void decode_sampler(learner::BatchSampler& s, std::string_view payload) {
  Reader r(payload, "checkpoint sampler");
  const std::uint64_t n = r.u64();
  if (n != s.order().size()) throw IoError("checkpoint sampler: pool size mismatch");
  for (auto& i : s.order()) i = static_cast<int>(r.u32());
  s.cursor() = r.u64();
  rng_from_text(s.rng(), r.bytes());
}

std::string encode_bank(mixbank::MixBank& bank) {
  Writer w;
  w.u32(bank.num_classes());
  w.u32(bank.capacity());
  for (auto origin : {balance::Origin::kLabeled, balance::Origin::kUnlabeled}) {
    for (long c : bank.push_counts(origin)) w.i64(c);
    for (const auto& bucket : bank.buckets(origin)) {
      w.u64(bucket.size());
      for (const auto& e : bucket) {
        w.u32(e.image.height);
        w.u32(e.image.width);
        w.u32(e.image.channels);
        w.f32s(e.image.pixels);
        w.u32(e.class_idx);
        w.f32(e.confidence);
      }
    }
  }
  return w.take();
}

void decode_bank(mixbank::MixBank& bank, std::string_view payload) {
  Reader r(payload, "checkpoint bank");
  if (r.u32() != static_cast<std::uint32_t>(bank.num_classes()) ||
      r.u32() != static_cast<std::uint32_t>(bank.capacity()))
    throw IoError("checkpoint bank: shape mismatch");
  for (auto origin : {balance::Origin::kLabeled, balance::Origin::kUnlabeled}) {
    for (long& c : bank.push_counts(origin)) c = r.i64();
    for (auto& bucket : bank.buckets(origin)) {
      bucket.clear();
      const std::uint64_t n = r.u64();
      for (std::uint64_t i = 0; i < n; ++i) {
        mixbank::Entry e;
        e.image.height = static_cast<int>(r.u32());
        e.image.width = static_cast<int>(r.u32());
        e.image.channels = static_cast<int>(r.u32());
        e.image.pixels = r.f32s();
        if (e.image.pixels.size() != static_cast<std::size_t>(e.image.height) * e.image.width * e.image.channels)
          throw IoError("checkpoint bank: image size mismatch");
        e.class_idx = static_cast<int>(r.u32());
        e.confidence = r.f32();
        bucket.push_back(std::move(e));
      }
    }
  }
  if (!r.done()) throw IoError("checkpoint bank: trailing data");
}

std::string config_text(const learner::TrainConfig& cfg) {
  config::RunManifest m;
  m.train = cfg;
  m.data.num_classes = cfg.balance.num_classes;
  return config::to_config_text(m);
}

const std::string& find(const std::vector<Section>& sections, std::string_view name) {
  for (const auto& s : sections)
    if (s.name == name) return s.payload;
  throw IoError("checkpoint: missing section '" + std::string(name) + "'");
}

}  // namespace

std::string encode_container(const std::vector<Section>& sections) {
  Writer w;
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(sections.size()));
  std::string out = std::string(kMagic, 4) + w.take();
  for (const auto& s : sections) {
    w.u32(static_cast<std::uint32_t>(s.name.size()));
    out += w.take() + s.name;
    w.u64(s.payload.size());
    out += w.take() + s.payload;
  }
  return out;
}

std::vector<Section> decode_container(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw IoError("checkpoint: bad magic");
  Reader r(bytes.substr(4), "checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  std::vector<Section> sections;
  for (std::uint32_t i = 0; i < count; ++i) {
    Section s;
    s.name = std::string(r.raw(r.u32()));
    s.payload = std::string(r.raw(r.u64()));
    sections.push_back(std::move(s));
  }
  if (!r.done()) throw IoError("checkpoint: trailing data");
  return sections;
}

void write_container(const std::filesystem::path& path, const std::vector<Section>& sections) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::string bytes = encode_container(sections);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<Section> read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_container(ss.str());
}

std::string encode_balance(const balance::ClassBalanceState& st) {
  Writer w;
  const int C = st.num_classes();
  w.u32(C);
  for (int n : st.labeled_counts) w.i64(n);
  w.i64(st.unlabeled_total);
  w.f64s(st.d_u);
  w.u8(st.d_initialized);
  w.f64s(st.e_x);
  w.f64s(st.e_u);
  for (int c = 0; c < C; ++c) w.u8(st.e_x_initialized[c]);
  for (int c = 0; c < C; ++c) w.u8(st.e_u_initialized[c]);
  w.f64(st.tau_e);
  w.u8(st.tau_e_initialized);
  return w.take();
}

balance::ClassBalanceState decode_balance(std::string_view payload) {
  Reader r(payload, "balance state");
  balance::ClassBalanceState st;
  const int C = static_cast<int>(r.u32());
  if (C < 2 || C > 1 << 20) throw IoError("balance state: bad class count");
  st.labeled_counts.resize(C);
  for (int& n : st.labeled_counts) n = static_cast<int>(r.i64());
  st.unlabeled_total = r.i64();
  st.d_u = r.f64s();
  st.d_initialized = r.u8() != 0;
  st.e_x = r.f64s();
  st.e_u = r.f64s();
  if (st.d_u.size() != static_cast<std::size_t>(C) || st.e_x.size() != static_cast<std::size_t>(C) ||
      st.e_u.size() != static_cast<std::size_t>(C))
    throw IoError("balance state: array length mismatch");
  st.e_x_initialized.resize(C);
  st.e_u_initialized.resize(C);
  for (int c = 0; c < C; ++c) st.e_x_initialized[c] = r.u8() != 0;
  for (int c = 0; c < C; ++c) st.e_u_initialized[c] = r.u8() != 0;
  st.tau_e = r.f64();
  st.tau_e_initialized = r.u8() != 0;
  if (!r.done()) throw IoError("balance state: trailing data");
  return st;
}

std::vector<Section> capture(learner::Trainer& trainer) {
  auto st = trainer.mutable_state();
  std::vector<Section> out;
  out.push_back({"config", config_text(trainer.config())});
  out.push_back({"params", encode_params(*st.params)});
  {
    Writer w;
    w.f64(st.optimizer->base_lr);
    w.f64(st.optimizer->momentum);
    w.i64(st.optimizer->iteration);
    w.i64(st.optimizer->total_iterations);
    w.bytes(encode_params(st.optimizer->velocity));
    out.push_back({"optimizer", w.take()});
  }
  out.push_back({"balance", encode_balance(*st.balance)});
  out.push_back({"bank", encode_bank(*st.bank)});
  out.push_back({"sampler.labeled", encode_sampler(*st.labeled_sampler)});
  out.push_back({"sampler.unlabeled", encode_sampler(*st.unlabeled_sampler)});
  {
    Writer w;
    w.bytes(rng_text(*st.bank_rng));
    w.bytes(rng_text(*st.mixer_rng));
    w.i64(*st.iteration);
    out.push_back({"progress", w.take()});
  }
  return out;
}

void restore(learner::Trainer& trainer, const std::vector<Section>& sections) {
  if (find(sections, "config") != config_text(trainer.config()))
    throw ConfigError("checkpoint was written with a different configuration", "config");
  auto st = trainer.mutable_state();
  decode_params(*st.params, find(sections, "params"));
  {
    Reader r(find(sections, "optimizer"), "checkpoint optimizer");
    st.optimizer->base_lr = r.f64();
    st.optimizer->momentum = r.f64();
    st.optimizer->iteration = r.i64();
    st.optimizer->total_iterations = r.i64();
    decode_params(st.optimizer->velocity, r.bytes());
  }
  balance::ClassBalanceState bal = decode_balance(find(sections, "balance"));
  if (bal.labeled_counts != st.balance->labeled_counts || bal.unlabeled_total != st.balance->unlabeled_total)
    throw ConfigError("checkpoint was written for a different dataset", "config");
  *st.balance = std::move(bal);
  decode_bank(*st.bank, find(sections, "bank"));
  decode_sampler(*st.labeled_sampler, find(sections, "sampler.labeled"));
  decode_sampler(*st.unlabeled_sampler, find(sections, "sampler.unlabeled"));
  {
    Reader r(find(sections, "progress"), "checkpoint progress");
    rng_from_text(*st.bank_rng, r.bytes());
    rng_from_text(*st.mixer_rng, r.bytes());
    *st.iteration = r.i64();
  }
}

void save(const std::filesystem::path& path, learner::Trainer& trainer) { write_container(path, capture(trainer)); }

void load(const std::filesystem::path& path, learner::Trainer& trainer) { restore(trainer, read_container(path)); }

}  // namespace bem::checkpoint
