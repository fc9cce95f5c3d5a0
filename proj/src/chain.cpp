#include "bladefl/chain.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <memory>
#include <set>

#include <openssl/evp.h>
#include <openssl/hmac.h>

#include "bladefl/error.hpp"

namespace bladefl {

namespace {

struct MdCtxDeleter {
  void operator()(EVP_MD_CTX* ctx) const { EVP_MD_CTX_free(ctx); }
};
using MdCtx = std::unique_ptr<EVP_MD_CTX, MdCtxDeleter>;

MdCtx new_sha256() {
  MdCtx ctx(EVP_MD_CTX_new());
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::Io, "sha256 init failed");
  }
  return ctx;
}

void update(EVP_MD_CTX* ctx, std::span<const std::uint8_t> data) {
  if (EVP_DigestUpdate(ctx, data.data(), data.size()) != 1) throw Error(ErrorCode::Io, "sha256 update failed");
}

Hash32 finish(EVP_MD_CTX* ctx) {
  Hash32 out{};
  unsigned int len = 0;
  if (EVP_DigestFinal_ex(ctx, out.data(), &len) != 1 || len != out.size()) {
    throw Error(ErrorCode::Io, "sha256 final failed");
  }
  return out;
}

Bytes signed_message(std::uint32_t client_id, std::uint32_t round, std::span<const std::uint8_t> payload) {
  Bytes msg;
  msg.reserve(16 + payload.size());
  ByteWriter w(msg);
  w.put<std::uint32_t>(client_id);
  w.put<std::uint32_t>(round);
  w.put<std::uint64_t>(payload.size());
  w.put_bytes(payload);
  return msg;
}

Bytes block_suffix(std::uint64_t nonce, std::uint64_t height, std::uint32_t miner) {
  Bytes b;
  ByteWriter w(b);
  w.put<std::uint64_t>(nonce);
  w.put<std::uint64_t>(height);
  w.put<std::uint32_t>(miner);
  return b;
}

std::vector<Transaction> sorted_txs(std::vector<Transaction> txs) {
  std::sort(txs.begin(), txs.end(),
            [](const Transaction& a, const Transaction& b) { return a.client_id < b.client_id; });
  return txs;
}

// Empty string when the set holds exactly one tx per client 0..n-1.
std::string completeness_problem(std::span<const Transaction> txs, std::size_t n_clients) {
  if (txs.size() != n_clients) {
    return std::to_string(txs.size()) + " transactions for " + std::to_string(n_clients) + " clients";
  }
  std::set<std::uint32_t> seen;
  for (const auto& tx : txs) {
    if (tx.client_id >= n_clients) return "unknown client " + std::to_string(tx.client_id);
    if (!seen.insert(tx.client_id).second) return "duplicate client " + std::to_string(tx.client_id);
  }
  return {};
}

ValidationReport violation(std::uint64_t height, Violation reason, std::string detail) {
  return ValidationReport{false, height, reason, std::move(detail)};
}

}  // namespace

Hash32 sha256(std::span<const std::uint8_t> data) {
  auto ctx = new_sha256();
  update(ctx.get(), data);
  return finish(ctx.get());
}

Hash32 hmac_sha256(const Key32& key, std::span<const std::uint8_t> data) {
  Hash32 out{};
  unsigned int len = 0;
  if (HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), data.data(), data.size(),
           out.data(), &len) == nullptr ||
      len != out.size()) {
    throw Error(ErrorCode::Io, "hmac failed");
  }
  return out;
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  s.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    s.push_back(kDigits[b >> 4]);
    s.push_back(kDigits[b & 0xf]);
  }
  return s;
}

// ---- keys -----------------------------------------------------------------

KeyRegistry KeyRegistry::generate(int n_clients, std::uint64_t seed) {
  KeyRegistry reg;
  for (int id = 0; id < n_clients; ++id) {
    Rng rng = make_stream(seed, Stream::Keys, static_cast<std::uint64_t>(id));
    Key32 key{};
    for (std::size_t i = 0; i < key.size(); i += 8) {
      const std::uint64_t word = rng();
      std::memcpy(key.data() + i, &word, 8);
    }
    reg.register_client(static_cast<std::uint32_t>(id), key);
  }
  return reg;
}

const Key32& KeyRegistry::key(std::uint32_t id) const {
  const auto it = keys_.find(id);
  if (it == keys_.end()) throw Error(ErrorCode::UnknownClient, "client " + std::to_string(id));
  return it->second;
}

namespace {
constexpr std::uint32_t kKeysMagic = 0x4b4c4642;   // "BFLK"
constexpr std::uint32_t kChainMagic = 0x434c4642;  // "BFLC"
constexpr std::uint32_t kChainVersion = 1;

Bytes slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return Bytes((std::istreambuf_iterator<char>(in)), {});
}

void dump(const std::filesystem::path& path, const Bytes& b) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}
}  // namespace

void KeyRegistry::save(const std::filesystem::path& path) const {
  Bytes b;
  ByteWriter w(b);
  w.put<std::uint32_t>(kKeysMagic);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(keys_.size()));
  for (const auto& [id, key] : keys_) {
    w.put<std::uint32_t>(id);
    w.put_bytes(key);
  }
  dump(path, b);
}

KeyRegistry KeyRegistry::load(const std::filesystem::path& path) {
  const Bytes b = slurp(path);
  ByteReader r(b);
  if (r.get<std::uint32_t>() != kKeysMagic) throw Error(ErrorCode::BadMagic, path.string() + " is not a key file");
  KeyRegistry reg;
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto id = r.get<std::uint32_t>();
    Key32 key{};
    const auto raw = r.get_bytes(key.size());
    std::copy(raw.begin(), raw.end(), key.begin());
    reg.register_client(id, key);
  }
  return reg;
}

// ---- transactions ---------------------------------------------------------

Transaction sign_tx(const KeyRegistry& registry, std::uint32_t client_id, std::uint32_t round,
                    Bytes payload) {
  const Key32& key = registry.key(client_id);
  Transaction tx{client_id, round, std::move(payload), {}};
  tx.signature = hmac_sha256(key, signed_message(client_id, round, tx.payload));
  return tx;
}

bool verify_tx(const Transaction& tx, const KeyRegistry& registry) {
  if (!registry.contains(tx.client_id)) return false;
  const Hash32 expected = hmac_sha256(registry.key(tx.client_id),
                                      signed_message(tx.client_id, tx.round, tx.payload));
  // Constant-time compare.
  std::uint8_t diff = 0;
  for (std::size_t i = 0; i < expected.size(); ++i) diff |= expected[i] ^ tx.signature[i];
  return diff == 0;
}

// ---- blocks ---------------------------------------------------------------

Bytes canonical_tx_encoding(std::span<const Transaction> txs) {
  std::vector<const Transaction*> order;
  order.reserve(txs.size());
  for (const auto& tx : txs) order.push_back(&tx);
  std::stable_sort(order.begin(), order.end(),
                   [](const Transaction* a, const Transaction* b) { return a->client_id < b->client_id; });
  Bytes out;
  ByteWriter w(out);
  for (const auto* tx : order) {
    w.put<std::uint32_t>(tx->client_id);
    w.put<std::uint32_t>(tx->round);
    w.put<std::uint64_t>(tx->payload.size());
    w.put_bytes(tx->payload);
    w.put_bytes(tx->signature);
  }
  return out;
}

Hash32 compute_block_hash(const Block& b) {
  auto ctx = new_sha256();
  update(ctx.get(), b.prev_hash);
  update(ctx.get(), canonical_tx_encoding(b.txs));
  update(ctx.get(), block_suffix(b.nonce, b.height, b.miner_id));
  return finish(ctx.get());
}

bool meets_difficulty(const Hash32& h, unsigned difficulty_bits) {
  unsigned bits = difficulty_bits;
  for (std::uint8_t byte : h) {
    if (bits == 0) return true;
    if (bits >= 8) {
      if (byte != 0) return false;
      bits -= 8;
    } else {
      return (byte >> (8 - bits)) == 0;
    }
  }
  return bits == 0;
}

const Block& genesis_block() {
  static const Block genesis = [] {
    Block g;
    g.hash = compute_block_hash(g);
    return g;
  }();
  return genesis;
}

MiningClock::MiningClock(MiningMode mode, double beta, std::uint64_t seed)
    : mode_(mode), beta_(beta), rng_(make_stream(seed, Stream::Mining)) {
  if (!(beta > 0.0)) throw Error(ErrorCode::NonPositiveParameter, "beta must be > 0");
}

double MiningClock::charge_block() {
  double dt = beta_;
  if (mode_ == MiningMode::Stochastic) {
    std::exponential_distribution<double> draw(1.0 / beta_);
    dt = draw(rng_);
  }
  now_ += dt;
  return dt;
}

std::uint32_t MiningClock::pick_miner(std::uint64_t round, std::uint32_t n_clients) {
  if (n_clients == 0) throw Error(ErrorCode::InvalidParameter, "no clients to mine");
  if (mode_ == MiningMode::Deterministic) {
    return static_cast<std::uint32_t>((round > 0 ? round - 1 : 0) % n_clients);
  }
  std::uniform_int_distribution<std::uint32_t> pick(0, n_clients - 1);
  return pick(rng_);
}

Block mine_block(const Block& prev, std::vector<Transaction> txs, unsigned difficulty_bits,
                 std::uint32_t miner_id, MiningClock& clock, std::size_t n_clients) {
  if (difficulty_bits > kMaxDifficultyBits) {
    throw Error(ErrorCode::InvalidParameter, "difficulty_bits above " + std::to_string(kMaxDifficultyBits));
  }
  Block b;
  b.height = prev.height + 1;
  b.prev_hash = prev.hash;
  b.txs = sorted_txs(std::move(txs));
  b.miner_id = miner_id;
  if (const auto problem = completeness_problem(b.txs, n_clients); !problem.empty()) {
    throw Error(ErrorCode::IncompleteTxSet, problem);
  }

  // Everything ahead of the nonce is fixed; hash it once and fork the state.
  auto prefix = new_sha256();
  update(prefix.get(), b.prev_hash);
  update(prefix.get(), canonical_tx_encoding(b.txs));
  MdCtx trial(EVP_MD_CTX_new());
  if (!trial) throw Error(ErrorCode::Io, "sha256 alloc failed");
  for (std::uint64_t nonce = 0;; ++nonce) {
    if (EVP_MD_CTX_copy_ex(trial.get(), prefix.get()) != 1) throw Error(ErrorCode::Io, "sha256 copy failed");
    update(trial.get(), block_suffix(nonce, b.height, b.miner_id));
    const Hash32 h = finish(trial.get());
    if (meets_difficulty(h, difficulty_bits)) {
      b.nonce = nonce;
      b.hash = h;
      break;
    }
  }
  clock.charge_block();
  b.timestamp = clock.now();
  return b;
}

const char* to_string(Violation v) {
  switch (v) {
    case Violation::Genesis: return "genesis";
    case Violation::Linkage: return "linkage";
    case Violation::HashMismatch: return "hash-mismatch";
    case Violation::ProofOfWork: return "proof-of-work";
    case Violation::IncompleteTxSet: return "incomplete-tx-set";
    case Violation::WrongRound: return "wrong-round";
    case Violation::BadSignature: return "bad-signature";
  }
  return "unknown";
}

ValidationReport validate_block(const Block& prev, const Block& block, const KeyRegistry& registry,
                                unsigned difficulty_bits) {
  const std::uint64_t h = prev.height + 1;
  if (block.height != h) {
    return violation(h, Violation::Linkage,
                     "expected height " + std::to_string(h) + ", found " + std::to_string(block.height));
  }
  if (block.prev_hash != prev.hash) return violation(h, Violation::Linkage, "prev_hash does not match");
  if (compute_block_hash(block) != block.hash) {
    return violation(h, Violation::HashMismatch, "stored hash differs from recomputed hash");
  }
  if (!meets_difficulty(block.hash, difficulty_bits)) {
    return violation(h, Violation::ProofOfWork, "hash misses the difficulty target");
  }
  if (const auto problem = completeness_problem(block.txs, registry.size()); !problem.empty()) {
    return violation(h, Violation::IncompleteTxSet, problem);
  }
  for (const auto& tx : block.txs) {
    if (tx.round != h) {
      return violation(h, Violation::WrongRound, "client " + std::to_string(tx.client_id) +
                                                     " signed for round " + std::to_string(tx.round));
    }
    if (!verify_tx(tx, registry)) {
      return violation(h, Violation::BadSignature, "client " + std::to_string(tx.client_id));
    }
  }
  return {};
}

ValidationReport validate_ledger(const Ledger& ledger, const KeyRegistry& registry,
                                 unsigned difficulty_bits) {
  const auto& blocks = ledger.blocks();
  if (blocks.empty() || blocks.front().height != 0 || blocks.front().hash != genesis_block().hash ||
      compute_block_hash(blocks.front()) != genesis_block().hash) {
    return violation(0, Violation::Genesis, "ledger does not start at the fixed genesis");
  }
  for (std::size_t i = 1; i < blocks.size(); ++i) {
    auto report = validate_block(blocks[i - 1], blocks[i], registry, difficulty_bits);
    if (!report.ok) {
      report.height = i;
      return report;
    }
  }
  return {};
}

// ---- ledger files ---------------------------------------------------------

void Ledger::save(const std::filesystem::path& path, unsigned difficulty_bits) const {
  Bytes out;
  ByteWriter w(out);
  w.put<std::uint32_t>(kChainMagic);
  w.put<std::uint32_t>(kChainVersion);
  w.put<std::uint32_t>(difficulty_bits);
  w.put<std::uint64_t>(blocks_.size());
  for (const auto& b : blocks_) {
    Bytes rec;
    ByteWriter r(rec);
    r.put<std::uint64_t>(b.height);
    r.put_bytes(b.prev_hash);
    r.put<std::uint64_t>(b.nonce);
    r.put<std::uint32_t>(b.miner_id);
    r.put<double>(b.timestamp);
    r.put_bytes(b.hash);
    r.put<std::uint32_t>(static_cast<std::uint32_t>(b.txs.size()));
    r.put_bytes(canonical_tx_encoding(b.txs));
    w.put<std::uint64_t>(rec.size());
    w.put_bytes(rec);
  }
  dump(path, out);
}

Ledger::Loaded Ledger::load(const std::filesystem::path& path) {
  const Bytes raw = slurp(path);
  ByteReader in(raw);
  if (in.get<std::uint32_t>() != kChainMagic) throw Error(ErrorCode::BadMagic, path.string() + " is not a ledger file");
  if (in.get<std::uint32_t>() != kChainVersion) throw Error(ErrorCode::BadMagic, "unsupported ledger version");
  Loaded out;
  out.difficulty_bits = in.get<std::uint32_t>();
  out.ledger.blocks_.clear();
  const auto count = in.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = in.get<std::uint64_t>();
    ByteReader r(in.get_bytes(len));
    Block b;
    b.height = r.get<std::uint64_t>();
    auto copy32 = [&r](Hash32& dst) {
      const auto s = r.get_bytes(dst.size());
      std::copy(s.begin(), s.end(), dst.begin());
    };
    copy32(b.prev_hash);
    b.nonce = r.get<std::uint64_t>();
    b.miner_id = r.get<std::uint32_t>();
    b.timestamp = r.get<double>();
    copy32(b.hash);
    const auto n_tx = r.get<std::uint32_t>();
    for (std::uint32_t t = 0; t < n_tx; ++t) {
      Transaction tx;
      tx.client_id = r.get<std::uint32_t>();
      tx.round = r.get<std::uint32_t>();
      const auto plen = r.get<std::uint64_t>();
      const auto p = r.get_bytes(plen);
      tx.payload.assign(p.begin(), p.end());
      copy32(tx.signature);
      b.txs.push_back(std::move(tx));
    }
    if (r.remaining() != 0) throw Error(ErrorCode::CountMismatch, "trailing bytes in block record");
    out.ledger.blocks_.push_back(std::move(b));
  }
  return out;
}

}  // namespace bladefl
