#include <gtest/gtest.h>

#include <cstring>

#include "support.hpp"
#include "ulm/checkpoint.hpp"

using namespace ulm;

namespace {

ModelBundle toy_ulm_bundle() {
  ModelBundle m;
  m.kind = ModelKind::ulm;
  m.embedding = {EmbeddingProvenance::pseudo, 7, ""};
  m.ulm.emplace(UlmConfig{.dim = 16, .heads = 2, .key_dim = 8}, pseudo_table(FeatureCatalog::standard(), 16, 7), 3);
  m.seed = 3;
  return m;
}

ModelBundle toy_mlp_bundle(ModelKind kind) {
  ModelBundle m;
  m.kind = kind;
  if (kind == ModelKind::mlp_m) {
    m.mlps.emplace_back(MlpVariant::multitask, 0, 5, 8);
  } else {
    for (std::size_t t = 0; t < kTargetCount; ++t) m.mlps.emplace_back(MlpVariant::binary, t, 5, 8);
  }
  m.thresholds.glucose_high = 6.9;
  return m;
}

Batch sample_batch() {
  Rng rng(21);
  return make_batch(support::random_examples(rng, 12));
}

}  // namespace

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  for (const ModelBundle& m : {toy_ulm_bundle(), toy_mlp_bundle(ModelKind::mlp_m), toy_mlp_bundle(ModelKind::mlp_b)}) {
    const std::string bytes = save_checkpoint(m);
    const ModelBundle back = load_checkpoint(bytes);
    EXPECT_EQ(back.kind, m.kind);
    EXPECT_EQ(save_checkpoint(back), bytes) << to_string(m.kind);
    EXPECT_EQ(back.version, model_version(bytes));
    EXPECT_EQ(back.thresholds, m.thresholds);
  }
}

TEST(Checkpoint, LoadedModelPredictsIdentically) {
  const Batch b = sample_batch();
  for (const ModelBundle& m : {toy_ulm_bundle(), toy_mlp_bundle(ModelKind::mlp_m), toy_mlp_bundle(ModelKind::mlp_b)}) {
    const ModelBundle back = load_checkpoint(save_checkpoint(m));
    EXPECT_EQ(back.predict(b), m.predict(b)) << to_string(m.kind);
    EXPECT_EQ(m.predict(b).shape(), (Shape{12, 4}));
  }
}

TEST(Checkpoint, HeaderLayout) {
  const std::string bytes = save_checkpoint(toy_ulm_bundle());
  EXPECT_EQ(bytes.substr(0, 8), std::string("ULMCKPT\0", 8));
  std::uint64_t h = 0;
  for (int i = 7; i >= 0; --i) h = (h << 8) | static_cast<unsigned char>(bytes[kCatalogHashOffset + i]);
  EXPECT_EQ(h, FeatureCatalog::standard().hash());
  EXPECT_NE(bytes.find("\"provenance\":\"pseudo\""), std::string::npos);
  EXPECT_NE(bytes.find("embeddings.table"), std::string::npos);
}

TEST(Checkpoint, TamperedCatalogHashIsRejected) {
  std::string bytes = save_checkpoint(toy_ulm_bundle());
  bytes[kCatalogHashOffset + 2] ^= 0x10;
  try {
    load_checkpoint(bytes);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("catalog hash"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, CorruptInputsAreRejected) {
  const std::string bytes = save_checkpoint(toy_mlp_bundle(ModelKind::mlp_m));
  EXPECT_THROW(load_checkpoint(bytes.substr(0, bytes.size() - 3)), CheckpointError);
  EXPECT_THROW(load_checkpoint(bytes + "x"), CheckpointError);
  EXPECT_THROW(load_checkpoint("not a checkpoint at all"), CheckpointError);
  std::string wrong_version = bytes;
  wrong_version[8] = 9;
  EXPECT_THROW(load_checkpoint(wrong_version), CheckpointError);
}

TEST(Checkpoint, VersionTracksContent) {
  ModelBundle a = toy_mlp_bundle(ModelKind::mlp_m), b = toy_mlp_bundle(ModelKind::mlp_m);
  b.mlps[0].params().items()[0].value[0] += 1e-12;
  EXPECT_NE(model_version(save_checkpoint(a)), model_version(save_checkpoint(b)));
  EXPECT_EQ(model_version(save_checkpoint(a)), model_version(save_checkpoint(toy_mlp_bundle(ModelKind::mlp_m))));
}
