#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <unistd.h>

#include "bladefl/chain.hpp"
#include "support.hpp"

using namespace bladefl;

namespace {

Bytes as_bytes(const std::string& s) { return Bytes(s.begin(), s.end()); }

Bytes payload_for(std::uint32_t client, std::uint64_t round) {
  Bytes b(24);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = static_cast<std::uint8_t>(client * 31 + round * 7 + i);
  return b;
}

std::vector<Transaction> round_txs(const KeyRegistry& reg, std::uint32_t n, std::uint32_t round) {
  std::vector<Transaction> txs;
  for (std::uint32_t i = n; i-- > 0;) txs.push_back(sign_tx(reg, i, round, payload_for(i, round)));
  return txs;
}

struct Chain {
  KeyRegistry registry = KeyRegistry::generate(3, 5);
  Ledger ledger;
  MiningClock clock{MiningMode::Deterministic, 2.0, 5};
  unsigned bits = 8;

  explicit Chain(int blocks) {
    for (int h = 1; h <= blocks; ++h) {
      const auto round = static_cast<std::uint32_t>(h);
      ledger.append(mine_block(ledger.tip(), round_txs(registry, 3, round), bits,
                               clock.pick_miner(round, 3), clock, 3));
    }
  }
};

}  // namespace

TEST_CASE("hash primitives match published vectors") {
  CHECK(to_hex(sha256(as_bytes("abc"))) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  // HMAC pads short keys with zeros, so a zero-filled 32-byte key is the
  // 4-byte key of the RFC 4231 case.
  Key32 key{};
  std::memcpy(key.data(), "Jefe", 4);
  CHECK(to_hex(hmac_sha256(key, as_bytes("what do ya want for nothing?"))) ==
        "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843");
}

TEST_CASE("signatures") {
  const KeyRegistry reg = KeyRegistry::generate(2, 1);
  const Transaction tx = sign_tx(reg, 0, 3, payload_for(0, 3));
  CHECK(verify_tx(tx, reg));

  Transaction flipped = tx;
  flipped.payload[5] ^= 0x01;
  CHECK_FALSE(verify_tx(flipped, reg));

  Transaction as_b = tx;
  as_b.client_id = 1;
  CHECK_FALSE(verify_tx(as_b, reg));

  Transaction other_round = tx;
  other_round.round = 4;
  CHECK_FALSE(verify_tx(other_round, reg));

  Transaction unknown = tx;
  unknown.client_id = 9;
  CHECK_FALSE(verify_tx(unknown, reg));
  CHECK_ERROR(sign_tx(reg, 9, 1, {}), ErrorCode::UnknownClient);

  CHECK(KeyRegistry::generate(2, 1).key(0) == reg.key(0));
  CHECK(KeyRegistry::generate(2, 2).key(0) != reg.key(0));
  CHECK(reg.key(0) != reg.key(1));
}

TEST_CASE("mining") {
  const KeyRegistry reg = KeyRegistry::generate(2, 3);
  SUBCASE("difficulty 0 takes nonce 0 and charges beta") {
    MiningClock clock(MiningMode::Deterministic, 2.5, 1);
    const Block b = mine_block(genesis_block(), round_txs(reg, 2, 1), 0, 0, clock, 2);
    CHECK(b.nonce == 0);
    CHECK(clock.now() == 2.5);
    CHECK(b.timestamp == 2.5);
    CHECK(b.hash == compute_block_hash(b));
  }
  SUBCASE("difficulty 8 gives a zero first byte at the lowest nonce") {
    MiningClock clock(MiningMode::Deterministic, 1.0, 1);
    const Block b = mine_block(genesis_block(), round_txs(reg, 2, 1), 8, 1, clock, 2);
    CHECK(b.hash[0] == 0x00);
    // Oracle: every lower nonce misses the target.
    Block probe = b;
    for (std::uint64_t n = 0; n < b.nonce; ++n) {
      probe.nonce = n;
      CHECK(compute_block_hash(probe)[0] != 0x00);
    }
    MiningClock again(MiningMode::Deterministic, 1.0, 1);
    CHECK(mine_block(genesis_block(), round_txs(reg, 2, 1), 8, 1, again, 2).nonce == b.nonce);
  }
  SUBCASE("transactions are sorted into canonical order") {
    MiningClock clock(MiningMode::Deterministic, 1.0, 1);
    const Block b = mine_block(genesis_block(), round_txs(reg, 2, 1), 0, 0, clock, 2);
    CHECK(b.txs[0].client_id == 0);
    CHECK(b.txs[1].client_id == 1);
  }
  SUBCASE("incomplete transaction sets") {
    MiningClock clock(MiningMode::Deterministic, 1.0, 1);
    auto txs = round_txs(reg, 2, 1);
    txs.pop_back();
    CHECK_ERROR(mine_block(genesis_block(), txs, 0, 0, clock, 2), ErrorCode::IncompleteTxSet);
    auto dup = round_txs(reg, 2, 1);
    dup[1] = dup[0];
    CHECK_ERROR(mine_block(genesis_block(), dup, 0, 0, clock, 2), ErrorCode::IncompleteTxSet);
  }
  SUBCASE("difficulty cap") {
    MiningClock clock(MiningMode::Deterministic, 1.0, 1);
    CHECK_ERROR(mine_block(genesis_block(), round_txs(reg, 2, 1), kMaxDifficultyBits + 1, 0, clock, 2),
                ErrorCode::InvalidParameter);
  }
}

TEST_CASE("stochastic mining time has mean beta") {
  const KeyRegistry reg = KeyRegistry::generate(1, 4);
  MiningClock clock(MiningMode::Stochastic, 2.0, 17);
  Block prev = genesis_block();
  for (std::uint32_t k = 1; k <= 1000; ++k) {
    prev = mine_block(prev, {sign_tx(reg, 0, k, payload_for(0, k))}, 0, 0, clock, 1);
  }
  const double mean = clock.now() / 1000.0;
  CHECK(mean >= 1.8);
  CHECK(mean <= 2.2);
}

TEST_CASE("miner selection") {
  MiningClock rr(MiningMode::Deterministic, 1.0, 1);
  CHECK(rr.pick_miner(1, 4) == 0);
  CHECK(rr.pick_miner(2, 4) == 1);
  CHECK(rr.pick_miner(5, 4) == 0);
  MiningClock uni(MiningMode::Stochastic, 1.0, 1);
  std::vector<int> seen(4);
  for (std::uint64_t k = 1; k <= 400; ++k) ++seen[uni.pick_miner(k, 4)];
  for (int count : seen) CHECK(count > 50);
}

TEST_CASE("validate_ledger") {
  Chain chain(3);
  REQUIRE(chain.ledger.height() == 3);
  CHECK(validate_ledger(chain.ledger, chain.registry, chain.bits).ok);

  SUBCASE("payload byte flip in block 2") {
    chain.ledger.mutable_blocks()[2].txs[1].payload[3] ^= 0x80;
    const ValidationReport r = validate_ledger(chain.ledger, chain.registry, chain.bits);
    CHECK_FALSE(r.ok);
    CHECK(r.height == 2);
    CHECK((r.reason == Violation::BadSignature || r.reason == Violation::HashMismatch));
  }
  SUBCASE("forged payload in a re-mined block") {
    // An attacker who redoes the proof of work still cannot forge the MAC.
    Block& b = chain.ledger.mutable_blocks()[2];
    b.txs[0].payload[0] ^= 0x01;
    MiningClock clock(MiningMode::Deterministic, 1.0, 1);
    b = mine_block(chain.ledger.blocks()[1], b.txs, chain.bits, b.miner_id, clock, 3);
    chain.ledger.mutable_blocks().resize(3);
    const ValidationReport r = validate_ledger(chain.ledger, chain.registry, chain.bits);
    CHECK(r.height == 2);
    CHECK(r.reason == Violation::BadSignature);
  }
  SUBCASE("signature swap between clients") {
    auto& txs = chain.ledger.mutable_blocks()[2].txs;
    std::swap(txs[0].signature, txs[1].signature);
    const ValidationReport r = validate_ledger(chain.ledger, chain.registry, chain.bits);
    CHECK_FALSE(r.ok);
    CHECK(r.height == 2);
  }
  SUBCASE("reorder blocks 2 and 3") {
    auto& blocks = chain.ledger.mutable_blocks();
    std::swap(blocks[2], blocks[3]);
    const ValidationReport r = validate_ledger(chain.ledger, chain.registry, chain.bits);
    CHECK(r.height == 2);
    CHECK(r.reason == Violation::Linkage);
  }
  SUBCASE("stricter difficulty") {
    const ValidationReport r = validate_ledger(chain.ledger, chain.registry, 20);
    CHECK_FALSE(r.ok);
    CHECK(r.reason == Violation::ProofOfWork);
  }
  SUBCASE("altered genesis") {
    chain.ledger.mutable_blocks()[0].nonce = 1;
    CHECK(validate_ledger(chain.ledger, chain.registry, chain.bits).reason == Violation::Genesis);
  }
  SUBCASE("unknown registry") {
    const ValidationReport r = validate_ledger(chain.ledger, KeyRegistry::generate(3, 6), chain.bits);
    CHECK(r.height == 1);
    CHECK(r.reason == Violation::BadSignature);
  }
}

TEST_CASE("ledger and key files round trip") {
  Chain chain(3);
  const auto dir = std::filesystem::temp_directory_path() / ("bladefl_chain_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  chain.ledger.save(dir / "ledger.bin", chain.bits);
  chain.registry.save(dir / "keys.bin");
  const Ledger::Loaded loaded = Ledger::load(dir / "ledger.bin");
  const KeyRegistry keys = KeyRegistry::load(dir / "keys.bin");
  CHECK(loaded.difficulty_bits == chain.bits);
  REQUIRE(loaded.ledger.blocks().size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(loaded.ledger.blocks()[i].hash == chain.ledger.blocks()[i].hash);
    CHECK(loaded.ledger.blocks()[i].timestamp == chain.ledger.blocks()[i].timestamp);
  }
  CHECK(validate_ledger(loaded.ledger, keys, loaded.difficulty_bits).ok);

  // Canonical encoding is stable: saving again gives the same bytes.
  loaded.ledger.save(dir / "again.bin", loaded.difficulty_bits);
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  };
  CHECK(slurp(dir / "again.bin") == slurp(dir / "ledger.bin"));

  std::filesystem::resize_file(dir / "ledger.bin", std::filesystem::file_size(dir / "ledger.bin") - 5);
  CHECK_ERROR(Ledger::load(dir / "ledger.bin"), ErrorCode::TruncatedFile);
  std::filesystem::remove_all(dir);
}
