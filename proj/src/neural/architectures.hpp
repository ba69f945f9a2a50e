#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "volbench/neural.hpp"

namespace volbench {

class TcnEncoder : public Encoder {
 public:
  TcnEncoder(const CellConfig& cfg, ParameterStore& store, Initializer& init);
  Var encode(const Bound& p, const Var& inputs, const StepContext& ctx) const override;

 private:
  struct Block {
    std::size_t dilation = 1;
    std::size_t v = 0, g = 0, bias = 0;
    std::optional<std::size_t> proj, proj_bias;
  };
  std::size_t hidden_;
  std::vector<Block> blocks_;
};

class DilatedRnnEncoder : public Encoder {
 public:
  DilatedRnnEncoder(const CellConfig& cfg, ParameterStore& store, Initializer& init);
  Var encode(const Bound& p, const Var& inputs, const StepContext& ctx) const override;

 private:
  std::vector<std::size_t> dilations_;
  std::vector<RecurrentCell> cells_;
};

class IndRnnEncoder : public Encoder {
 public:
  IndRnnEncoder(const CellConfig& cfg, ParameterStore& store, Initializer& init);
  Var encode(const Bound& p, const Var& inputs, const StepContext& ctx) const override;

 private:
  struct Layer {
    std::size_t w = 0, u = 0, b = 0;
  };
  std::size_t hidden_;
  std::vector<Layer> layers_;
};

class QrnnEncoder : public Encoder {
 public:
  QrnnEncoder(const CellConfig& cfg, ParameterStore& store, Initializer& init);
  Var encode(const Bound& p, const Var& inputs, const StepContext& ctx) const override;

 private:
  struct Layer {
    std::size_t filter = 0, bias = 0;
  };
  std::size_t hidden_;
  std::vector<Layer> layers_;
};

class SkipRnnEncoder : public Encoder {
 public:
  SkipRnnEncoder(const CellConfig& cfg, ParameterStore& store, Initializer& init);
  Var encode(const Bound& p, const Var& inputs, const StepContext& ctx) const override;

 private:
  std::vector<RecurrentCell> cells_;
  std::size_t wp_ = 0, bp_ = 0;
};

class RhnEncoder : public Encoder {
 public:
  RhnEncoder(const CellConfig& cfg, ParameterStore& store, Initializer& init);
  Var encode(const Bound& p, const Var& inputs, const StepContext& ctx) const override;

 private:
  struct Layer {
    std::size_t w = 0;
    std::vector<std::size_t> r, b;
  };
  std::size_t hidden_;
  std::vector<Layer> layers_;
};

class HmRnnEncoder : public Encoder {
 public:
  HmRnnEncoder(const CellConfig& cfg, ParameterStore& store, Initializer& init);
  Var encode(const Bound& p, const Var& inputs, const StepContext& ctx) const override;

 private:
  struct Layer {
    std::size_t bottom_up = 0, recurrent = 0, bias = 0;
    std::optional<std::size_t> top_down;
  };
  std::size_t hidden_;
  std::vector<Layer> layers_;
};

class FsRnnEncoder : public Encoder {
 public:
  FsRnnEncoder(const CellConfig& cfg, ParameterStore& store, Initializer& init);
  Var encode(const Bound& p, const Var& inputs, const StepContext& ctx) const override;

 private:
  struct Layer {
    std::vector<RecurrentCell> fast;
    std::vector<RecurrentCell> slow;
  };
  std::vector<Layer> layers_;
};

std::unique_ptr<Encoder> make_encoder(const CellConfig& cfg, ParameterStore& store, Initializer& init);

}  // namespace volbench
