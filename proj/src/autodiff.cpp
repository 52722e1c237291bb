#include "mtrz/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mtrz::ad {

double kl_value(double d) {
  if (std::abs(d) < 1e-4) {
    return d * d * (0.5 + (d / 6.0) + (d * d / 24.0));
  }
  return std::expm1(d) - d;
}

double kl_derivative(double d) { return std::expm1(d); }

Var Tape::push(std::vector<double> value, Backward backward) {
  Node node;
  node.grad.assign(value.size(), 0.0);
  node.value = std::move(value);
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(std::vector<double> value) { return push(std::move(value), nullptr); }

Var Tape::scalar(double value) { return push({value}, nullptr); }

Var Tape::embedding(ParamBlock& table, std::size_t row) {
  if (row >= table.rows) {
    throw std::out_of_range("embedding row out of range for block " + table.name);
  }
  const auto* begin = table.value.data() + (row * table.cols);
  std::vector<double> out(begin, begin + table.cols);
  ParamBlock* block = &table;
  return push(std::move(out), [block, row](Tape& t, std::uint32_t self) {
    const auto& g = t.grad_of(self);
    double* dst = block->grad.data() + (row * block->cols);
    for (std::size_t i = 0; i < g.size(); ++i) {
      dst[i] += g[i];
    }
  });
}

Var Tape::affine(ParamBlock& weight, ParamBlock& bias, std::initializer_list<Var> inputs) {
  std::vector<std::uint32_t> ids;
  std::size_t width = 0;
  for (const Var v : inputs) {
    ids.push_back(v.id);
    width += nodes_[v.id].value.size();
  }
  if (width != weight.cols || bias.size() != weight.rows) {
    throw std::invalid_argument("affine: shape mismatch for block " + weight.name);
  }
  std::vector<double> out(bias.value);
  for (std::size_t r = 0; r < weight.rows; ++r) {
    const double* w = weight.value.data() + (r * weight.cols);
    double acc = 0.0;
    for (const auto id : ids) {
      const auto& x = nodes_[id].value;
      for (std::size_t c = 0; c < x.size(); ++c) {
        acc += w[c] * x[c];
      }
      w += x.size();
    }
    out[r] += acc;
  }
  ParamBlock* wb = &weight;
  ParamBlock* bb = &bias;
  return push(std::move(out), [wb, bb, ids = std::move(ids)](Tape& t, std::uint32_t self) {
    const auto& g = t.grad_of(self);
    for (std::size_t r = 0; r < wb->rows; ++r) {
      bb->grad[r] += g[r];
    }
    std::size_t offset = 0;
    for (const auto id : ids) {
      const auto& x = t.value_of(id);
      auto& gx = t.grad_of(id);
      for (std::size_t r = 0; r < wb->rows; ++r) {
        const double gr = g[r];
        if (gr == 0.0) {
          continue;
        }
        const double* w = wb->value.data() + (r * wb->cols) + offset;
        double* dw = wb->grad.data() + (r * wb->cols) + offset;
        for (std::size_t c = 0; c < x.size(); ++c) {
          dw[c] += gr * x[c];
          gx[c] += gr * w[c];
        }
      }
      offset += x.size();
    }
  });
}

Var Tape::add(Var a, Var b) {
  const auto& x = nodes_[a.id].value;
  const auto& y = nodes_[b.id].value;
  if (x.size() != y.size()) {
    throw std::invalid_argument("add: size mismatch");
  }
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] + y[i];
  }
  return push(std::move(out), [a, b](Tape& t, std::uint32_t self) {
    const auto& g = t.grad_of(self);
    auto& ga = t.grad_of(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
    }
    auto& gb = t.grad_of(b.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      gb[i] += g[i];
    }
  });
}

Var Tape::sub(Var a, Var b) {
  const auto& x = nodes_[a.id].value;
  const auto& y = nodes_[b.id].value;
  if (x.size() != y.size()) {
    throw std::invalid_argument("sub: size mismatch");
  }
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] - y[i];
  }
  return push(std::move(out), [a, b](Tape& t, std::uint32_t self) {
    const auto& g = t.grad_of(self);
    auto& ga = t.grad_of(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
    }
    auto& gb = t.grad_of(b.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      gb[i] -= g[i];
    }
  });
}

Var Tape::mul(Var a, Var b) {
  const auto& x = nodes_[a.id].value;
  const auto& y = nodes_[b.id].value;
  if (x.size() != y.size()) {
    throw std::invalid_argument("mul: size mismatch");
  }
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] * y[i];
  }
  return push(std::move(out), [a, b](Tape& t, std::uint32_t self) {
    const auto& g = t.grad_of(self);
    const auto& x = t.value_of(a.id);
    const auto& y = t.value_of(b.id);
    auto& ga = t.grad_of(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * y[i];
    }
    auto& gb = t.grad_of(b.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      gb[i] += g[i] * x[i];
    }
  });
}

Var Tape::sigmoid(Var a) {
  const auto& x = nodes_[a.id].value;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = 1.0 / (1.0 + std::exp(-x[i]));
  }
  return push(std::move(out), [a](Tape& t, std::uint32_t self) {
    const auto& g = t.grad_of(self);
    const auto& y = t.value_of(self);
    auto& ga = t.grad_of(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * y[i] * (1.0 - y[i]);
    }
  });
}

Var Tape::tanh(Var a) {
  const auto& x = nodes_[a.id].value;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::tanh(x[i]);
  }
  return push(std::move(out), [a](Tape& t, std::uint32_t self) {
    const auto& g = t.grad_of(self);
    const auto& y = t.value_of(self);
    auto& ga = t.grad_of(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * (1.0 - (y[i] * y[i]));
    }
  });
}

Var Tape::log_softmax_at(Var logits, std::size_t index, double temperature) {
  const auto& z = nodes_[logits.id].value;
  if (index >= z.size()) {
    throw std::out_of_range("log_softmax_at: index out of range");
  }
  if (!(temperature > 0.0)) {
    throw std::invalid_argument("log_softmax_at: temperature must be positive");
  }
  const double inv_t = 1.0 / temperature;
  double max_z = z[0] * inv_t;
  for (const double v : z) {
    max_z = std::max(max_z, v * inv_t);
  }
  double denom = 0.0;
  for (const double v : z) {
    denom += std::exp((v * inv_t) - max_z);
  }
  const double log_denom = max_z + std::log(denom);
  const double out = (z[index] * inv_t) - log_denom;
  return push({out}, [logits, index, inv_t, log_denom](Tape& t, std::uint32_t self) {
    const double g = t.grad_of(self)[0];
    const auto& z = t.value_of(logits.id);
    auto& gz = t.grad_of(logits.id);
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double p = std::exp((z[i] * inv_t) - log_denom);
      gz[i] -= g * p * inv_t;
    }
    gz[index] += g * inv_t;
  });
}

Var Tape::exp(Var a) {
  const double y = std::exp(nodes_[a.id].value.front());
  return push({y}, [a](Tape& t, std::uint32_t self) {
    t.grad_of(a.id)[0] += t.grad_of(self)[0] * t.value_of(self)[0];
  });
}

Var Tape::scale(Var a, double factor) {
  const auto& x = nodes_[a.id].value;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] * factor;
  }
  return push(std::move(out), [a, factor](Tape& t, std::uint32_t self) {
    const auto& g = t.grad_of(self);
    auto& ga = t.grad_of(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * factor;
    }
  });
}

Var Tape::add_scalar(Var a, double offset) {
  const auto& x = nodes_[a.id].value;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] + offset;
  }
  return push(std::move(out), [a](Tape& t, std::uint32_t self) {
    const auto& g = t.grad_of(self);
    auto& ga = t.grad_of(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
    }
  });
}

Var Tape::minimum(Var a, Var b) {
  const double x = nodes_[a.id].value.front();
  const double y = nodes_[b.id].value.front();
  // Ties route the adjoint to the first argument.
  const bool pick_a = x <= y;
  return push({pick_a ? x : y}, [a, b, pick_a](Tape& t, std::uint32_t self) {
    t.grad_of(pick_a ? a.id : b.id)[0] += t.grad_of(self)[0];
  });
}

Var Tape::clamp(Var a, double lo, double hi) {
  const double x = nodes_[a.id].value.front();
  const bool inside = x >= lo && x <= hi;
  return push({std::clamp(x, lo, hi)}, [a, inside](Tape& t, std::uint32_t self) {
    if (inside) {
      t.grad_of(a.id)[0] += t.grad_of(self)[0];
    }
  });
}

Var Tape::sum(std::span<const Var> terms) {
  double total = 0.0;
  std::vector<std::uint32_t> ids;
  ids.reserve(terms.size());
  for (const Var v : terms) {
    total += nodes_[v.id].value.front();
    ids.push_back(v.id);
  }
  return push({total}, [ids = std::move(ids)](Tape& t, std::uint32_t self) {
    const double g = t.grad_of(self)[0];
    for (const auto id : ids) {
      t.grad_of(id)[0] += g;
    }
  });
}

Var Tape::mean(std::span<const Var> terms) {
  if (terms.empty()) {
    throw std::invalid_argument("mean: no terms");
  }
  return scale(sum(terms), 1.0 / static_cast<double>(terms.size()));
}

Var Tape::kl_estimate(Var logp_theta, double logp_ref) {
  const double d = logp_ref - nodes_[logp_theta.id].value.front();
  return push({kl_value(d)}, [logp_theta, d](Tape& t, std::uint32_t self) {
    t.grad_of(logp_theta.id)[0] -= t.grad_of(self)[0] * kl_derivative(d);
  });
}

Var Tape::sum_squares(ParamBlock& block) {
  double total = 0.0;
  for (const double v : block.value) {
    total += v * v;
  }
  ParamBlock* b = &block;
  return push({total}, [b](Tape& t, std::uint32_t self) {
    const double g = t.grad_of(self)[0];
    for (std::size_t i = 0; i < b->value.size(); ++i) {
      b->grad[i] += 2.0 * g * b->value[i];
    }
  });
}

Var Tape::reduce_sum(Var a) {
  double total = 0.0;
  for (const double v : nodes_[a.id].value) {
    total += v;
  }
  return push({total}, [a](Tape& t, std::uint32_t self) {
    const double g = t.grad_of(self)[0];
    for (auto& ga : t.grad_of(a.id)) {
      ga += g;
    }
  });
}

void Tape::backward(Var loss) {
  if (nodes_[loss.id].value.size() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar");
  }
  if (!std::isfinite(nodes_[loss.id].value.front())) {
    throw std::runtime_error("backward: loss is not finite");
  }
  for (auto& node : nodes_) {
    std::fill(node.grad.begin(), node.grad.end(), 0.0);
  }
  nodes_[loss.id].grad[0] = 1.0;
  for (std::uint32_t id = loss.id + 1; id-- > 0;) {
    if (nodes_[id].backward) {
      nodes_[id].backward(*this, id);
    }
  }
}

}  // namespace mtrz::ad
