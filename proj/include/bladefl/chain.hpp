#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bladefl/bytes.hpp"
#include "bladefl/rng.hpp"

namespace bladefl {

using Hash32 = std::array<std::uint8_t, 32>;
using Key32 = std::array<std::uint8_t, 32>;

Hash32 sha256(std::span<const std::uint8_t> data);
Hash32 hmac_sha256(const Key32& key, std::span<const std::uint8_t> data);
std::string to_hex(std::span<const std::uint8_t> bytes);

// Per-client MAC keys. Identity binding inside one simulation.
class KeyRegistry {
 public:
  KeyRegistry() = default;
  // n_clients keys drawn from a seeded stream, ids 0..n-1.
  static KeyRegistry generate(int n_clients, std::uint64_t seed);

  void register_client(std::uint32_t id, const Key32& key) { keys_[id] = key; }
  bool contains(std::uint32_t id) const { return keys_.count(id) != 0; }
  // Throws UnknownClient.
  const Key32& key(std::uint32_t id) const;
  std::size_t size() const { return keys_.size(); }

  //   "BFLK" | u32 count | (u32 id | key[32]) * count
  void save(const std::filesystem::path& path) const;
  static KeyRegistry load(const std::filesystem::path& path);

 private:
  std::map<std::uint32_t, Key32> keys_;
};

struct Transaction {
  std::uint32_t client_id = 0;
  std::uint32_t round = 0;  // integrated round k
  Bytes payload;            // encoded WeightVector
  Hash32 signature{};
};

// MAC over u32 client_id | u32 round | u64 len | payload.
Transaction sign_tx(const KeyRegistry& registry, std::uint32_t client_id, std::uint32_t round,
                    Bytes payload);
bool verify_tx(const Transaction& tx, const KeyRegistry& registry);

struct Block {
  std::uint64_t height = 0;
  Hash32 prev_hash{};
  std::vector<Transaction> txs;  // sorted by client_id
  std::uint64_t nonce = 0;
  std::uint32_t miner_id = 0;
  double timestamp = 0.0;  // virtual seconds, not covered by the hash
  Hash32 hash{};
};

// Fixed-width fields per transaction, sorted by client_id:
//   u32 client_id | u32 round | u64 len | payload | signature[32]
Bytes canonical_tx_encoding(std::span<const Transaction> txs);
// SHA-256(prev_hash | canonical txs | u64 nonce | u64 height | u32 miner_id)
Hash32 compute_block_hash(const Block& b);
bool meets_difficulty(const Hash32& h, unsigned difficulty_bits);
const Block& genesis_block();

enum class MiningMode { Deterministic, Stochastic };

// Virtual time axis shared by all clients. Mining costs beta per block in
// deterministic mode and an exponential draw with mean beta otherwise.
class MiningClock {
 public:
  MiningClock(MiningMode mode, double beta, std::uint64_t seed);

  double now() const { return now_; }
  void advance(double dt) { now_ += dt; }
  MiningMode mode() const { return mode_; }
  double beta() const { return beta_; }
  // Charges one block's mining time to the clock and returns it.
  double charge_block();
  // Winner of the given round: round-robin or uniform.
  std::uint32_t pick_miner(std::uint64_t round, std::uint32_t n_clients);

 private:
  MiningMode mode_;
  double beta_;
  double now_ = 0.0;
  Rng rng_;
};

inline constexpr unsigned kMaxDifficultyBits = 20;

// Sorts txs, then scans nonces upward from zero and returns the first block
// meeting the target. Advances the clock by one block's mining time.
// Throws IncompleteTxSet unless there is exactly one tx per client.
Block mine_block(const Block& prev, std::vector<Transaction> txs, unsigned difficulty_bits,
                 std::uint32_t miner_id, MiningClock& clock, std::size_t n_clients);

enum class Violation {
  Genesis,
  Linkage,
  HashMismatch,
  ProofOfWork,
  IncompleteTxSet,
  WrongRound,
  BadSignature,
};
const char* to_string(Violation v);

struct ValidationReport {
  bool ok = true;
  std::uint64_t height = 0;  // earliest violating height when !ok
  Violation reason = Violation::Genesis;
  std::string detail;
};

// Checks one block against its predecessor.
ValidationReport validate_block(const Block& prev, const Block& block, const KeyRegistry& registry,
                                unsigned difficulty_bits);

class Ledger {
 public:
  Ledger() : blocks_{genesis_block()} {}

  const std::vector<Block>& blocks() const { return blocks_; }
  std::vector<Block>& mutable_blocks() { return blocks_; }
  const Block& tip() const { return blocks_.back(); }
  std::uint64_t height() const { return blocks_.size() - 1; }
  void append(Block b) { blocks_.push_back(std::move(b)); }

  //   "BFLC" | u32 version | u32 difficulty_bits | u64 block_count |
  //   (u64 record_len | record) * block_count
  // record: u64 height | prev[32] | u64 nonce | u32 miner | f64 timestamp |
  //         hash[32] | u32 tx_count | canonical txs
  void save(const std::filesystem::path& path, unsigned difficulty_bits) const;
  struct Loaded;
  static Loaded load(const std::filesystem::path& path);

 private:
  std::vector<Block> blocks_;
};

struct Ledger::Loaded {
  Ledger ledger;
  unsigned difficulty_bits = 0;
};

// Linkage, proof of work, tx completeness and every signature, block by block.
ValidationReport validate_ledger(const Ledger& ledger, const KeyRegistry& registry,
                                 unsigned difficulty_bits);

}  // namespace bladefl
