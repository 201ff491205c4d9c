#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "config_json.hpp"
#include "tscodec/error.hpp"
#include "tscodec/trainer.hpp"

namespace tscodec::train {

namespace {

constexpr char kMagic[8] = {'T', 'S', 'C', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void floats(std::span<const float> v) {
    u64(v.size());
    for (float f : v) u32(std::bit_cast<std::uint32_t>(f));
    u64(model::parameter_digest(v));
  }
  std::vector<unsigned char>& buffer() { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  Reader(const std::vector<unsigned char>& buf, std::size_t end, std::string path)
      : buf_(buf), end_(end), path_(std::move(path)) {}

  void need(std::size_t n, const char* what) const {
    if (end_ - pos_ < n) {
      throw FormatError("checkpoint " + path_ + " truncated while reading " + what + " (need " +
                        std::to_string(n) + " bytes, " + std::to_string(end_ - pos_) + " left)");
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str(const char* what) {
    const auto n = u32(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<float> floats(const std::string& name) {
    const auto n = u64(name.c_str());
    if (n > (end_ - pos_) / 4) {
      throw FormatError("checkpoint " + path_ + " truncated in section '" + name + "'");
    }
    std::vector<float> v(n);
    for (auto& f : v) f = std::bit_cast<float>(u32(name.c_str()));
    const auto digest = u64(name.c_str());
    if (digest != model::parameter_digest(v)) {
      throw VerificationError("checkpoint " + path_ + ": digest mismatch in section '" + name + "'");
    }
    return v;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<unsigned char>& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string path_;
};

std::uint64_t fnv(const unsigned char* p, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

void expect_size(const std::vector<float>& v, Index n, const char* what) {
  if (static_cast<Index>(v.size()) != n) {
    throw FormatError(std::string(what) + " has " + std::to_string(v.size()) +
                      " values, config expects " + std::to_string(n));
  }
}

}  // namespace

std::string config_snapshot(const Checkpoint& ckpt) {
  config::Json j;
  j["stage"] = ckpt.stage;
  j["step"] = ckpt.step;
  j["model"] = config::to_json(ckpt.model);
  j["quantizer"] = config::to_json(ckpt.quantizer);
  j["discriminators"] = config::to_json(ckpt.discriminators);
  j["stage1"] = config::to_json(ckpt.stage1);
  j["stage2"] = config::to_json(ckpt.stage2);
  j["adam_steps"] = {{"encoder", ckpt.encoder_opt.t},
                     {"decoder_d", ckpt.decoder_d_opt.t},
                     {"decoder_p", ckpt.decoder_p_opt.t},
                     {"discriminators", ckpt.disc_opt.t}};
  j["digests"] = {{"encoder", model::digest_hex(ckpt.encoder_digest())},
                  {"codebook", model::digest_hex(ckpt.codebook_digest())}};
  return j.dump(2);
}

void Checkpoint::validate() const {
  if (stage != 1 && stage != 2) throw FormatError("checkpoint stage must be 1 or 2");
  model.validate();
  quantizer.validate();
  expect_size(encoder, model::Encoder<float>(model).parameter_count(), "encoder");
  expect_size(decoder_d, model::Decoder<float>(model).parameter_count(), "decoder_d");
  if (codebook.num_quantizers() != quantizer.num_quantizers || codebook.size() != quantizer.codebook_size ||
      codebook.dim() != model.latent_dim) {
    throw FormatError("codebook shape does not match the quantizer config");
  }
  codebook.validate();
  if (stage == 2) {
    discriminators.validate();
    expect_size(decoder_p, model::Decoder<float>(model).parameter_count(), "decoder_p");
    expect_size(disc_params, disc::DiscriminatorSet<float>(discriminators).parameter_count(),
                "discriminators");
  } else if (!decoder_p.empty() || !disc_params.empty()) {
    throw FormatError("stage-1 checkpoint must not contain stage-2 parameters");
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  ckpt.validate();
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.u32(kVersion);
  w.str(config_snapshot(ckpt));
  std::vector<std::pair<std::string, const std::vector<float>*>> sections{
      {"encoder", &ckpt.encoder},
      {"decoder_d", &ckpt.decoder_d},
      {"codebook.entries", &ckpt.codebook.entries()},
      {"codebook.counts", &ckpt.codebook.ema_counts()},
      {"codebook.sums", &ckpt.codebook.ema_sums()},
      {"adam.encoder.m", &ckpt.encoder_opt.m},
      {"adam.encoder.v", &ckpt.encoder_opt.v},
      {"adam.decoder_d.m", &ckpt.decoder_d_opt.m},
      {"adam.decoder_d.v", &ckpt.decoder_d_opt.v},
      {"decoder_p", &ckpt.decoder_p},
      {"discriminators", &ckpt.disc_params},
      {"adam.decoder_p.m", &ckpt.decoder_p_opt.m},
      {"adam.decoder_p.v", &ckpt.decoder_p_opt.v},
      {"adam.discriminators.m", &ckpt.disc_opt.m},
      {"adam.discriminators.v", &ckpt.disc_opt.v},
  };
  w.u32(static_cast<std::uint32_t>(sections.size()));
  for (const auto& [name, values] : sections) {
    w.str(name);
    w.floats(*values);
  }
  auto& buf = w.buffer();
  const auto digest = fnv(buf.data(), buf.size());
  w.u64(digest);

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + tmp);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("failed writing checkpoint: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (buf.size() < sizeof(kMagic) + 4 + 8) throw FormatError("checkpoint " + name + " is truncated");
  if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("not a checkpoint file (bad magic): " + name);
  }
  const std::size_t body = buf.size() - 8;
  std::uint64_t file_digest = 0;
  for (int i = 0; i < 8; ++i) file_digest |= static_cast<std::uint64_t>(buf[body + i]) << (8 * i);

  // Parse first so truncation is reported as such, then check the file digest.
  Reader p(buf, body, name);
  p.u64("magic");
  const auto version = p.u32("version");
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " in " + name);
  }
  const auto snapshot = p.str("config");
  config::Json j;
  try {
    j = config::Json::parse(snapshot);
  } catch (const std::exception& e) {
    throw FormatError("checkpoint " + name + ": corrupt config snapshot (" + e.what() + ")");
  }
  const auto count = p.u32("section count");
  std::map<std::string, std::vector<float>> sections;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto sname = p.str("section name");
    sections[sname] = p.floats(sname);
  }
  if (p.pos() != body) throw FormatError("checkpoint " + name + " has trailing bytes");
  if (fnv(buf.data(), body) != file_digest) {
    throw VerificationError("checkpoint " + name + ": file digest mismatch");
  }

  Checkpoint ckpt;
  try {
    ckpt.stage = j.at("stage").get<int>();
    ckpt.step = j.at("step").get<std::int64_t>();
    config::merge(ckpt.model, j.at("model"));
    config::merge(ckpt.quantizer, j.at("quantizer"));
    config::merge(ckpt.discriminators, j.at("discriminators"));
    config::merge(ckpt.stage1, j.at("stage1"));
    config::merge(ckpt.stage2, j.at("stage2"));
    const auto& steps = j.at("adam_steps");
    ckpt.encoder_opt.t = steps.at("encoder").get<std::int64_t>();
    ckpt.decoder_d_opt.t = steps.at("decoder_d").get<std::int64_t>();
    ckpt.decoder_p_opt.t = steps.at("decoder_p").get<std::int64_t>();
    ckpt.disc_opt.t = steps.at("discriminators").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint " + name + ": incomplete config snapshot (" + e.what() + ")");
  }
  auto take = [&](const char* key) {
    const auto it = sections.find(key);
    if (it == sections.end()) throw FormatError("checkpoint " + name + " lacks section '" + key + "'");
    return std::move(it->second);
  };
  ckpt.encoder = take("encoder");
  ckpt.decoder_d = take("decoder_d");
  ckpt.codebook = rvq::Codebook(ckpt.quantizer.num_quantizers, ckpt.quantizer.codebook_size,
                                ckpt.model.latent_dim);
  auto entries = take("codebook.entries");
  auto counts = take("codebook.counts");
  auto sums = take("codebook.sums");
  if (entries.size() != ckpt.codebook.entries().size() || counts.size() != ckpt.codebook.ema_counts().size() ||
      sums.size() != ckpt.codebook.ema_sums().size()) {
    throw FormatError("checkpoint " + name + ": codebook size does not match its config");
  }
  ckpt.codebook.entries() = std::move(entries);
  ckpt.codebook.ema_counts() = std::move(counts);
  ckpt.codebook.ema_sums() = std::move(sums);
  ckpt.encoder_opt.m = take("adam.encoder.m");
  ckpt.encoder_opt.v = take("adam.encoder.v");
  ckpt.decoder_d_opt.m = take("adam.decoder_d.m");
  ckpt.decoder_d_opt.v = take("adam.decoder_d.v");
  ckpt.decoder_p = take("decoder_p");
  ckpt.disc_params = take("discriminators");
  ckpt.decoder_p_opt.m = take("adam.decoder_p.m");
  ckpt.decoder_p_opt.v = take("adam.decoder_p.v");
  ckpt.disc_opt.m = take("adam.discriminators.m");
  ckpt.disc_opt.v = take("adam.discriminators.v");
  ckpt.validate();

  const auto& digests = j.at("digests");
  if (digests.value("encoder", "") != model::digest_hex(ckpt.encoder_digest()) ||
      digests.value("codebook", "") != model::digest_hex(ckpt.codebook_digest())) {
    throw VerificationError("checkpoint " + name + ": recorded digests do not match parameters");
  }
  return ckpt;
}

}  // namespace tscodec::train
