#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vtforge/error.hpp"
#include "vtforge/tensor.hpp"

namespace vtforge {

// Reverse-mode tape over dense tensors.
//
// Ops execute eagerly as they are recorded, so every node always holds a
// value. The tape can be re-run against new leaf values (rebind + recompute)
// and differentiated with backward(), which fills the grad slot of every
// node on the path to the requested scalar. Construction order is the
// topological order: an op only ever references ids that already exist.
//
// A Graph instance is single-threaded; distinct instances are independent.
// Reductions accumulate in double regardless of T, which keeps the float
// instantiation deterministic and makes forward values independent of
// summand storage order up to one final rounding.
template <typename T>
class Graph {
   public:
    using Id = int;

    // ---- leaves ----

    Id input(const std::string& name, Tensor<T> value, bool requires_grad = false) {
        if (name.empty()) fail(ErrKind::kConfig, "graph: input name must be nonempty");
        if (inputs_by_name_.count(name)) fail(ErrKind::kConfig, "graph: duplicate input '" + name + "'");
        Node n;
        n.name = name;
        n.value = std::move(value);
        n.value.requires_grad = requires_grad;
        n.needs_grad = requires_grad;
        nodes_.push_back(std::move(n));
        Id id = static_cast<Id>(nodes_.size()) - 1;
        inputs_by_name_[name] = id;
        return id;
    }

    Id constant(Tensor<T> value) {
        Node n;
        n.value = std::move(value);
        n.value.requires_grad = false;
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size()) - 1;
    }

    Id constant_scalar(T v) { return constant(Tensor<T>::scalar(v)); }

    // ---- elementwise ----

    Id add(Id a, Id b) {
        check_same_shape("add", a, b);
        return record({a, b}, val(a).shape,
                      [](Graph& g, Node& n) {
                          const auto& x = g.val(n.inputs[0]).data;
                          const auto& y = g.val(n.inputs[1]).data;
                          for (size_t i = 0; i < x.size(); ++i) n.value.data[i] = x[i] + y[i];
                      },
                      [](Graph& g, Node& n) {
                          const auto& go = n.value.grad;
                          g.accumulate(n.inputs[0], go);
                          g.accumulate(n.inputs[1], go);
                      });
    }

    Id sub(Id a, Id b) {
        check_same_shape("subtract", a, b);
        return record({a, b}, val(a).shape,
                      [](Graph& g, Node& n) {
                          const auto& x = g.val(n.inputs[0]).data;
                          const auto& y = g.val(n.inputs[1]).data;
                          for (size_t i = 0; i < x.size(); ++i) n.value.data[i] = x[i] - y[i];
                      },
                      [](Graph& g, Node& n) {
                          const auto& go = n.value.grad;
                          if (g.wants_grad(n.inputs[0])) g.accumulate(n.inputs[0], go);
                          if (g.wants_grad(n.inputs[1])) {
                              auto& gb = g.gbuf(n.inputs[1]);
                              for (size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
                          }
                      });
    }

    Id mul(Id a, Id b) {
        check_same_shape("multiply", a, b);
        return record({a, b}, val(a).shape,
                      [](Graph& g, Node& n) {
                          const auto& x = g.val(n.inputs[0]).data;
                          const auto& y = g.val(n.inputs[1]).data;
                          for (size_t i = 0; i < x.size(); ++i) n.value.data[i] = x[i] * y[i];
                      },
                      [](Graph& g, Node& n) {
                          const auto& go = n.value.grad;
                          const auto& x = g.val(n.inputs[0]).data;
                          const auto& y = g.val(n.inputs[1]).data;
                          if (g.wants_grad(n.inputs[0])) {
                              auto& ga = g.gbuf(n.inputs[0]);
                              for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * y[i];
                          }
                          if (g.wants_grad(n.inputs[1])) {
                              auto& gb = g.gbuf(n.inputs[1]);
                              for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * x[i];
                          }
                      });
    }

    Id scalar_mul(Id a, T c) {
        return record({a}, val(a).shape,
                      [c](Graph& g, Node& n) {
                          const auto& x = g.val(n.inputs[0]).data;
                          for (size_t i = 0; i < x.size(); ++i) n.value.data[i] = x[i] * c;
                      },
                      [c](Graph& g, Node& n) {
                          auto& ga = g.gbuf(n.inputs[0]);
                          const auto& go = n.value.grad;
                          for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * c;
                      });
    }

    Id scalar_add(Id a, T c) {
        return record({a}, val(a).shape,
                      [c](Graph& g, Node& n) {
                          const auto& x = g.val(n.inputs[0]).data;
                          for (size_t i = 0; i < x.size(); ++i) n.value.data[i] = x[i] + c;
                      },
                      [](Graph& g, Node& n) { g.accumulate(n.inputs[0], n.value.grad); });
    }

    Id reciprocal(Id a) {
        return record({a}, val(a).shape,
                      [](Graph& g, Node& n) {
                          const auto& x = g.val(n.inputs[0]).data;
                          for (size_t i = 0; i < x.size(); ++i) n.value.data[i] = T(1) / x[i];
                      },
                      [](Graph& g, Node& n) {
                          const auto& x = g.val(n.inputs[0]).data;
                          const auto& go = n.value.grad;
                          auto& ga = g.gbuf(n.inputs[0]);
                          for (size_t i = 0; i < go.size(); ++i) ga[i] -= go[i] / (x[i] * x[i]);
                      });
    }

    // tanh approximation
    Id gelu(Id a) {
        return record({a}, val(a).shape,
                      [](Graph& g, Node& n) {
                          const auto& x = g.val(n.inputs[0]).data;
                          for (size_t i = 0; i < x.size(); ++i) {
                              double u = kGeluK * (double(x[i]) + kGeluC * double(x[i]) * double(x[i]) * double(x[i]));
                              n.value.data[i] = T(0.5 * double(x[i]) * (1.0 + std::tanh(u)));
                          }
                      },
                      [](Graph& g, Node& n) {
                          const auto& x = g.val(n.inputs[0]).data;
                          const auto& go = n.value.grad;
                          auto& ga = g.gbuf(n.inputs[0]);
                          for (size_t i = 0; i < go.size(); ++i) {
                              double xi = double(x[i]);
                              double u = kGeluK * (xi + kGeluC * xi * xi * xi);
                              double t = std::tanh(u);
                              double du = kGeluK * (1.0 + 3.0 * kGeluC * xi * xi);
                              double d = 0.5 * (1.0 + t) + 0.5 * xi * (1.0 - t * t) * du;
                              ga[i] += T(double(go[i]) * d);
                          }
                      });
    }

    // ---- linear algebra / structure ----

    Id matmul(Id a, Id b) {
        const auto& x = val(a);
        const auto& y = val(b);
        if (x.rank() != 2 || y.rank() != 2 || x.cols() != y.rows())
            fail(ErrKind::kShape, "matmul: shape mismatch " + shape_str(x.shape) + " vs " + shape_str(y.shape));
        int m = x.rows(), k = x.cols(), p = y.cols();
        return record({a, b}, Shape{m, p},
                      [m, k, p](Graph& g, Node& n) {
                          const auto& xd = g.val(n.inputs[0]).data;
                          const auto& yd = g.val(n.inputs[1]).data;
                          g.scratch_.assign(static_cast<size_t>(m) * p, 0.0);
                          for (int i = 0; i < m; ++i) {
                              double* out = g.scratch_.data() + static_cast<size_t>(i) * p;
                              for (int kk = 0; kk < k; ++kk) {
                                  double xv = xd[static_cast<size_t>(i) * k + kk];
                                  const T* yrow = yd.data() + static_cast<size_t>(kk) * p;
                                  for (int j = 0; j < p; ++j) out[j] += xv * double(yrow[j]);
                              }
                          }
                          for (size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] = T(g.scratch_[i]);
                      },
                      [m, k, p](Graph& g, Node& n) {
                          const auto& go = n.value.grad;
                          const auto& xd = g.val(n.inputs[0]).data;
                          const auto& yd = g.val(n.inputs[1]).data;
                          if (g.wants_grad(n.inputs[0])) {
                              auto& ga = g.gbuf(n.inputs[0]);  // dA = dC * B^T
                              for (int i = 0; i < m; ++i)
                                  for (int kk = 0; kk < k; ++kk) {
                                      double acc = 0.0;
                                      const T* grow = go.data() + static_cast<size_t>(i) * p;
                                      const T* yrow = yd.data() + static_cast<size_t>(kk) * p;
                                      for (int j = 0; j < p; ++j) acc += double(grow[j]) * double(yrow[j]);
                                      ga[static_cast<size_t>(i) * k + kk] += T(acc);
                                  }
                          }
                          if (g.wants_grad(n.inputs[1])) {
                              auto& gb = g.gbuf(n.inputs[1]);  // dB = A^T * dC
                              g.scratch_.assign(static_cast<size_t>(k) * p, 0.0);
                              for (int i = 0; i < m; ++i)
                                  for (int kk = 0; kk < k; ++kk) {
                                      double xv = xd[static_cast<size_t>(i) * k + kk];
                                      double* out = g.scratch_.data() + static_cast<size_t>(kk) * p;
                                      const T* grow = go.data() + static_cast<size_t>(i) * p;
                                      for (int j = 0; j < p; ++j) out[j] += xv * double(grow[j]);
                                  }
                              for (size_t i = 0; i < gb.size(); ++i) gb[i] += T(g.scratch_[i]);
                          }
                      });
    }

    Id transpose(Id a) {
        const auto& x = val(a);
        if (x.rank() != 2) fail(ErrKind::kShape, "transpose: expected rank-2, got " + shape_str(x.shape));
        int r = x.rows(), c = x.cols();
        return record({a}, Shape{c, r},
                      [r, c](Graph& g, Node& n) {
                          const auto& xd = g.val(n.inputs[0]).data;
                          for (int i = 0; i < r; ++i)
                              for (int j = 0; j < c; ++j)
                                  n.value.data[static_cast<size_t>(j) * r + i] = xd[static_cast<size_t>(i) * c + j];
                      },
                      [r, c](Graph& g, Node& n) {
                          auto& ga = g.gbuf(n.inputs[0]);
                          const auto& go = n.value.grad;
                          for (int i = 0; i < r; ++i)
                              for (int j = 0; j < c; ++j)
                                  ga[static_cast<size_t>(i) * c + j] += go[static_cast<size_t>(j) * r + i];
                      });
    }

    Id reshape(Id a, Shape s) {
        const auto& x = val(a);
        if (shape_numel(s) != x.size())
            fail(ErrKind::kShape, "reshape: cannot view " + shape_str(x.shape) + " as " + shape_str(s));
        return record({a}, std::move(s),
                      [](Graph& g, Node& n) { n.value.data = g.val(n.inputs[0]).data; },
                      [](Graph& g, Node& n) { g.accumulate(n.inputs[0], n.value.grad); });
    }

    Id slice_rows(Id a, int r0, int r1) {
        const auto& x = val(a);
        if (x.rank() != 2 || r0 < 0 || r1 > x.rows() || r0 >= r1)
            fail(ErrKind::kShape, "slice_rows: rows [" + std::to_string(r0) + "," + std::to_string(r1) +
                                      ") invalid for " + shape_str(x.shape));
        int c = x.cols();
        return record({a}, Shape{r1 - r0, c},
                      [r0, c](Graph& g, Node& n) {
                          const auto& xd = g.val(n.inputs[0]).data;
                          std::copy(xd.begin() + static_cast<size_t>(r0) * c,
                                    xd.begin() + static_cast<size_t>(r0) * c + n.value.data.size(),
                                    n.value.data.begin());
                      },
                      [r0, c](Graph& g, Node& n) {
                          auto& ga = g.gbuf(n.inputs[0]);
                          const auto& go = n.value.grad;
                          for (size_t i = 0; i < go.size(); ++i) ga[static_cast<size_t>(r0) * c + i] += go[i];
                      });
    }

    Id slice_cols(Id a, int c0, int c1) {
        const auto& x = val(a);
        if (x.rank() != 2 || c0 < 0 || c1 > x.cols() || c0 >= c1)
            fail(ErrKind::kShape, "slice_cols: cols [" + std::to_string(c0) + "," + std::to_string(c1) +
                                      ") invalid for " + shape_str(x.shape));
        int r = x.rows(), c = x.cols(), w = c1 - c0;
        return record({a}, Shape{r, w},
                      [r, c, c0, w](Graph& g, Node& n) {
                          const auto& xd = g.val(n.inputs[0]).data;
                          for (int i = 0; i < r; ++i)
                              for (int j = 0; j < w; ++j)
                                  n.value.data[static_cast<size_t>(i) * w + j] =
                                      xd[static_cast<size_t>(i) * c + c0 + j];
                      },
                      [r, c, c0, w](Graph& g, Node& n) {
                          auto& ga = g.gbuf(n.inputs[0]);
                          const auto& go = n.value.grad;
                          for (int i = 0; i < r; ++i)
                              for (int j = 0; j < w; ++j)
                                  ga[static_cast<size_t>(i) * c + c0 + j] += go[static_cast<size_t>(i) * w + j];
                      });
    }

    Id concat_rows(const std::vector<Id>& parts) {
        if (parts.empty()) fail(ErrKind::kShape, "concat_rows: no operands");
        int c = val(parts[0]).cols(), r = 0;
        for (Id p : parts) {
            if (val(p).rank() != 2 || val(p).cols() != c)
                fail(ErrKind::kShape, "concat_rows: column mismatch " + shape_str(val(p).shape));
            r += val(p).rows();
        }
        return record(parts, Shape{r, c},
                      [](Graph& g, Node& n) {
                          size_t off = 0;
                          for (Id p : n.inputs) {
                              const auto& xd = g.val(p).data;
                              std::copy(xd.begin(), xd.end(), n.value.data.begin() + off);
                              off += xd.size();
                          }
                      },
                      [](Graph& g, Node& n) {
                          const auto& go = n.value.grad;
                          size_t off = 0;
                          for (Id p : n.inputs) {
                              size_t sz = g.val(p).size();
                              if (g.wants_grad(p)) {
                                  auto& gp = g.gbuf(p);
                                  for (size_t i = 0; i < sz; ++i) gp[i] += go[off + i];
                              }
                              off += sz;
                          }
                      });
    }

    Id concat_cols(const std::vector<Id>& parts) {
        if (parts.empty()) fail(ErrKind::kShape, "concat_cols: no operands");
        int r = val(parts[0]).rows(), c = 0;
        std::vector<int> widths;
        for (Id p : parts) {
            if (val(p).rank() != 2 || val(p).rows() != r)
                fail(ErrKind::kShape, "concat_cols: row mismatch " + shape_str(val(p).shape));
            widths.push_back(val(p).cols());
            c += val(p).cols();
        }
        return record(parts, Shape{r, c},
                      [r, c, widths](Graph& g, Node& n) {
                          int off = 0;
                          for (size_t pi = 0; pi < n.inputs.size(); ++pi) {
                              const auto& xd = g.val(n.inputs[pi]).data;
                              int w = widths[pi];
                              for (int i = 0; i < r; ++i)
                                  for (int j = 0; j < w; ++j)
                                      n.value.data[static_cast<size_t>(i) * c + off + j] =
                                          xd[static_cast<size_t>(i) * w + j];
                              off += w;
                          }
                      },
                      [r, c, widths](Graph& g, Node& n) {
                          const auto& go = n.value.grad;
                          int off = 0;
                          for (size_t pi = 0; pi < n.inputs.size(); ++pi) {
                              int w = widths[pi];
                              if (g.wants_grad(n.inputs[pi])) {
                                  auto& gp = g.gbuf(n.inputs[pi]);
                                  for (int i = 0; i < r; ++i)
                                      for (int j = 0; j < w; ++j)
                                          gp[static_cast<size_t>(i) * w + j] +=
                                              go[static_cast<size_t>(i) * c + off + j];
                              }
                              off += w;
                          }
                      });
    }

    // m: [r,c], v: [c] or [1,c]; adds v to every row of m
    Id add_rowwise(Id m, Id v) {
        const auto& x = val(m);
        const auto& y = val(v);
        if (x.rank() != 2 || static_cast<int>(y.size()) != x.cols())
            fail(ErrKind::kShape, "add_rowwise: shape mismatch " + shape_str(x.shape) + " vs " + shape_str(y.shape));
        int r = x.rows(), c = x.cols();
        return record({m, v}, x.shape,
                      [r, c](Graph& g, Node& n) {
                          const auto& xd = g.val(n.inputs[0]).data;
                          const auto& yd = g.val(n.inputs[1]).data;
                          for (int i = 0; i < r; ++i)
                              for (int j = 0; j < c; ++j)
                                  n.value.data[static_cast<size_t>(i) * c + j] =
                                      xd[static_cast<size_t>(i) * c + j] + yd[j];
                      },
                      [r, c](Graph& g, Node& n) {
                          const auto& go = n.value.grad;
                          if (g.wants_grad(n.inputs[0])) g.accumulate(n.inputs[0], go);
                          if (g.wants_grad(n.inputs[1])) {
                              auto& gv = g.gbuf(n.inputs[1]);
                              for (int j = 0; j < c; ++j) {
                                  double acc = 0.0;
                                  for (int i = 0; i < r; ++i) acc += double(go[static_cast<size_t>(i) * c + j]);
                                  gv[j] += T(acc);
                              }
                          }
                      });
    }

    // [H,W,C] -> [(H/p)*(W/p), p*p*C], patches in row-major grid order,
    // each patch flattened (py, px, channel)
    Id patchify(Id image, int patch) {
        const auto& x = val(image);
        if (x.rank() != 3) fail(ErrKind::kShape, "patchify: expected rank-3 image, got " + shape_str(x.shape));
        int h = x.shape[0], w = x.shape[1], ch = x.shape[2];
        if (patch <= 0 || h % patch != 0 || w % patch != 0)
            fail(ErrKind::kShape, "patchify: patch " + std::to_string(patch) + " does not tile " + shape_str(x.shape));
        int gh = h / patch, gw = w / patch;
        int np = gh * gw, pl = patch * patch * ch;
        return record({image}, Shape{np, pl},
                      [patch, gw, w, ch, pl](Graph& g, Node& n) {
                          const auto& xd = g.val(n.inputs[0]).data;
                          for (size_t o = 0; o < n.value.data.size(); ++o) {
                              int l = static_cast<int>(o) / pl, q = static_cast<int>(o) % pl;
                              int gy = l / gw, gx = l % gw;
                              int py = q / (patch * ch), rem = q % (patch * ch);
                              int px = rem / ch, c = rem % ch;
                              n.value.data[o] =
                                  xd[(static_cast<size_t>(gy * patch + py) * w + (gx * patch + px)) * ch + c];
                          }
                      },
                      [patch, gw, w, ch, pl](Graph& g, Node& n) {
                          auto& ga = g.gbuf(n.inputs[0]);
                          const auto& go = n.value.grad;
                          for (size_t o = 0; o < go.size(); ++o) {
                              int l = static_cast<int>(o) / pl, q = static_cast<int>(o) % pl;
                              int gy = l / gw, gx = l % gw;
                              int py = q / (patch * ch), rem = q % (patch * ch);
                              int px = rem / ch, c = rem % ch;
                              ga[(static_cast<size_t>(gy * patch + py) * w + (gx * patch + px)) * ch + c] += go[o];
                          }
                      });
    }

    // table: [V,D]; gathers rows table[ids[i]] into [n,D]
    Id embedding_lookup(Id table, std::vector<int> ids) {
        const auto& x = val(table);
        if (x.rank() != 2) fail(ErrKind::kShape, "embedding_lookup: table must be rank-2, got " + shape_str(x.shape));
        if (ids.empty()) fail(ErrKind::kShape, "embedding_lookup: empty index list");
        for (int id : ids)
            if (id < 0 || id >= x.rows())
                fail(ErrKind::kShape, "embedding_lookup: index " + std::to_string(id) + " out of range for " +
                                          shape_str(x.shape));
        int d = x.cols(), n_rows = static_cast<int>(ids.size());
        return record({table}, Shape{n_rows, d},
                      [ids, d](Graph& g, Node& n) {
                          const auto& xd = g.val(n.inputs[0]).data;
                          for (size_t i = 0; i < ids.size(); ++i)
                              std::copy(xd.begin() + static_cast<size_t>(ids[i]) * d,
                                        xd.begin() + static_cast<size_t>(ids[i]) * d + d,
                                        n.value.data.begin() + i * d);
                      },
                      [ids, d](Graph& g, Node& n) {
                          auto& ga = g.gbuf(n.inputs[0]);
                          const auto& go = n.value.grad;
                          for (size_t i = 0; i < ids.size(); ++i)
                              for (int j = 0; j < d; ++j)
                                  ga[static_cast<size_t>(ids[i]) * d + j] += go[i * d + j];
                      });
    }

    // ---- reductions / normalization ----

    Id sum(Id a) {
        return record({a}, Shape{},
                      [](Graph& g, Node& n) {
                          const auto& x = g.val(n.inputs[0]).data;
                          double acc = 0.0;
                          for (T v : x) acc += double(v);
                          n.value.data[0] = T(acc);
                      },
                      [](Graph& g, Node& n) {
                          auto& ga = g.gbuf(n.inputs[0]);
                          T go = n.value.grad[0];
                          for (auto& v : ga) v += go;
                      });
    }

    Id mean(Id a) {
        size_t cnt = val(a).size();
        return record({a}, Shape{},
                      [](Graph& g, Node& n) {
                          const auto& x = g.val(n.inputs[0]).data;
                          double acc = 0.0;
                          for (T v : x) acc += double(v);
                          n.value.data[0] = T(acc / double(x.size()));
                      },
                      [cnt](Graph& g, Node& n) {
                          auto& ga = g.gbuf(n.inputs[0]);
                          T go = T(double(n.value.grad[0]) / double(cnt));
                          for (auto& v : ga) v += go;
                      });
    }

    // softmax along the given axis; rank-1 tensors use axis 0
    Id softmax(Id a, int axis) {
        const auto& x = val(a);
        if (x.rank() == 1) {
            if (axis != 0) fail(ErrKind::kShape, "softmax: axis " + std::to_string(axis) + " for rank-1 tensor");
        } else if (x.rank() == 2) {
            if (axis != 0 && axis != 1) fail(ErrKind::kShape, "softmax: axis must be 0 or 1 for rank-2 tensor");
        } else {
            fail(ErrKind::kShape, "softmax: expected rank 1 or 2, got " + shape_str(x.shape));
        }
        // slices: number of independent distributions; stride walks one slice
        int len = x.rank() == 1 ? x.shape[0] : (axis == 1 ? x.cols() : x.rows());
        int slices = static_cast<int>(x.size()) / len;
        bool rowwise = x.rank() == 1 || axis == 1;
        return record({a}, x.shape,
                      [len, slices, rowwise](Graph& g, Node& n) {
                          const auto& xd = g.val(n.inputs[0]).data;
                          for (int s = 0; s < slices; ++s) {
                              auto at = [&](int i) -> size_t {
                                  return rowwise ? static_cast<size_t>(s) * len + i
                                                 : static_cast<size_t>(i) * slices + s;
                              };
                              double mx = -1e300;
                              for (int i = 0; i < len; ++i) mx = std::max(mx, double(xd[at(i)]));
                              double denom = 0.0;
                              for (int i = 0; i < len; ++i) denom += std::exp(double(xd[at(i)]) - mx);
                              for (int i = 0; i < len; ++i)
                                  n.value.data[at(i)] = T(std::exp(double(xd[at(i)]) - mx) / denom);
                          }
                      },
                      [len, slices, rowwise](Graph& g, Node& n) {
                          auto& ga = g.gbuf(n.inputs[0]);
                          const auto& go = n.value.grad;
                          const auto& p = n.value.data;
                          for (int s = 0; s < slices; ++s) {
                              auto at = [&](int i) -> size_t {
                                  return rowwise ? static_cast<size_t>(s) * len + i
                                                 : static_cast<size_t>(i) * slices + s;
                              };
                              double dot = 0.0;
                              for (int i = 0; i < len; ++i) dot += double(go[at(i)]) * double(p[at(i)]);
                              for (int i = 0; i < len; ++i)
                                  ga[at(i)] += T(double(p[at(i)]) * (double(go[at(i)]) - dot));
                          }
                      });
    }

    // per-row normalization of x: [r,c] with learned gain/bias of length c
    Id layer_norm(Id x, Id gain, Id bias, T eps = T(1e-5)) {
        const auto& xv = val(x);
        if (xv.rank() != 2) fail(ErrKind::kShape, "layer_norm: expected rank-2, got " + shape_str(xv.shape));
        int r = xv.rows(), c = xv.cols();
        if (static_cast<int>(val(gain).size()) != c || static_cast<int>(val(bias).size()) != c)
            fail(ErrKind::kShape, "layer_norm: gain/bias length must be " + std::to_string(c));
        return record({x, gain, bias}, xv.shape,
                      [r, c, eps](Graph& g, Node& n) {
                          const auto& xd = g.val(n.inputs[0]).data;
                          const auto& gd = g.val(n.inputs[1]).data;
                          const auto& bd = g.val(n.inputs[2]).data;
                          for (int i = 0; i < r; ++i) {
                              const T* row = xd.data() + static_cast<size_t>(i) * c;
                              double mu = 0.0;
                              for (int j = 0; j < c; ++j) mu += double(row[j]);
                              mu /= c;
                              double var = 0.0;
                              for (int j = 0; j < c; ++j) var += (double(row[j]) - mu) * (double(row[j]) - mu);
                              var /= c;
                              double inv = 1.0 / std::sqrt(var + double(eps));
                              for (int j = 0; j < c; ++j)
                                  n.value.data[static_cast<size_t>(i) * c + j] =
                                      T((double(row[j]) - mu) * inv * double(gd[j]) + double(bd[j]));
                          }
                      },
                      [r, c, eps](Graph& g, Node& n) {
                          const auto& xd = g.val(n.inputs[0]).data;
                          const auto& gd = g.val(n.inputs[1]).data;
                          const auto& go = n.value.grad;
                          bool wx = g.wants_grad(n.inputs[0]);
                          bool wg = g.wants_grad(n.inputs[1]);
                          bool wb = g.wants_grad(n.inputs[2]);
                          for (int i = 0; i < r; ++i) {
                              const T* row = xd.data() + static_cast<size_t>(i) * c;
                              const T* grow = go.data() + static_cast<size_t>(i) * c;
                              double mu = 0.0;
                              for (int j = 0; j < c; ++j) mu += double(row[j]);
                              mu /= c;
                              double var = 0.0;
                              for (int j = 0; j < c; ++j) var += (double(row[j]) - mu) * (double(row[j]) - mu);
                              var /= c;
                              double inv = 1.0 / std::sqrt(var + double(eps));
                              if (wg || wb) {
                                  auto& gg = g.gbuf(n.inputs[1]);
                                  auto& gb = g.gbuf(n.inputs[2]);
                                  for (int j = 0; j < c; ++j) {
                                      double xhat = (double(row[j]) - mu) * inv;
                                      if (wg) gg[j] += T(double(grow[j]) * xhat);
                                      if (wb) gb[j] += grow[j];
                                  }
                              }
                              if (wx) {
                                  auto& gx = g.gbuf(n.inputs[0]);
                                  double mean_dy = 0.0, mean_dy_xhat = 0.0;
                                  for (int j = 0; j < c; ++j) {
                                      double dyh = double(grow[j]) * double(gd[j]);
                                      double xhat = (double(row[j]) - mu) * inv;
                                      mean_dy += dyh;
                                      mean_dy_xhat += dyh * xhat;
                                  }
                                  mean_dy /= c;
                                  mean_dy_xhat /= c;
                                  for (int j = 0; j < c; ++j) {
                                      double dyh = double(grow[j]) * double(gd[j]);
                                      double xhat = (double(row[j]) - mu) * inv;
                                      gx[static_cast<size_t>(i) * c + j] +=
                                          T(inv * (dyh - mean_dy - xhat * mean_dy_xhat));
                                  }
                              }
                          }
                      });
    }

    // ---- scalar-valued losses ----

    // cosine of two equal-length vectors, denominator guarded by 1e-12
    Id cosine_similarity(Id u, Id v) {
        check_vector_pair("cosine_similarity", u, v);
        return record({u, v}, Shape{},
                      [](Graph& g, Node& n) {
                          const auto& a = g.val(n.inputs[0]).data;
                          const auto& b = g.val(n.inputs[1]).data;
                          double dot = 0.0, na = 0.0, nb = 0.0;
                          for (size_t i = 0; i < a.size(); ++i) {
                              dot += double(a[i]) * double(b[i]);
                              na += double(a[i]) * double(a[i]);
                              nb += double(b[i]) * double(b[i]);
                          }
                          n.value.data[0] = T(dot / std::max(std::sqrt(na) * std::sqrt(nb), kCosGuard));
                      },
                      [](Graph& g, Node& n) {
                          const auto& a = g.val(n.inputs[0]).data;
                          const auto& b = g.val(n.inputs[1]).data;
                          double dot = 0.0, na2 = 0.0, nb2 = 0.0;
                          for (size_t i = 0; i < a.size(); ++i) {
                              dot += double(a[i]) * double(b[i]);
                              na2 += double(a[i]) * double(a[i]);
                              nb2 += double(b[i]) * double(b[i]);
                          }
                          double denom = std::max(std::sqrt(na2) * std::sqrt(nb2), kCosGuard);
                          double s = dot / denom;
                          double go = double(n.value.grad[0]);
                          if (g.wants_grad(n.inputs[0])) {
                              auto& ga = g.gbuf(n.inputs[0]);
                              double invna2 = 1.0 / std::max(na2, kCosGuard);
                              for (size_t i = 0; i < a.size(); ++i)
                                  ga[i] += T(go * (double(b[i]) / denom - s * double(a[i]) * invna2));
                          }
                          if (g.wants_grad(n.inputs[1])) {
                              auto& gb = g.gbuf(n.inputs[1]);
                              double invnb2 = 1.0 / std::max(nb2, kCosGuard);
                              for (size_t i = 0; i < b.size(); ++i)
                                  gb[i] += T(go * (double(a[i]) / denom - s * double(b[i]) * invnb2));
                          }
                      });
    }

    // mean over all elements of (a-b)^2
    Id mse(Id a, Id b) {
        check_same_shape("mse", a, b);
        size_t cnt = val(a).size();
        return record({a, b}, Shape{},
                      [](Graph& g, Node& n) {
                          const auto& x = g.val(n.inputs[0]).data;
                          const auto& y = g.val(n.inputs[1]).data;
                          double acc = 0.0;
                          for (size_t i = 0; i < x.size(); ++i) {
                              double d = double(x[i]) - double(y[i]);
                              acc += d * d;
                          }
                          n.value.data[0] = T(acc / double(x.size()));
                      },
                      [cnt](Graph& g, Node& n) {
                          const auto& x = g.val(n.inputs[0]).data;
                          const auto& y = g.val(n.inputs[1]).data;
                          double go = double(n.value.grad[0]);
                          double scale = 2.0 * go / double(cnt);
                          if (g.wants_grad(n.inputs[0])) {
                              auto& ga = g.gbuf(n.inputs[0]);
                              for (size_t i = 0; i < x.size(); ++i)
                                  ga[i] += T(scale * (double(x[i]) - double(y[i])));
                          }
                          if (g.wants_grad(n.inputs[1])) {
                              auto& gb = g.gbuf(n.inputs[1]);
                              for (size_t i = 0; i < x.size(); ++i)
                                  gb[i] -= T(scale * (double(x[i]) - double(y[i])));
                          }
                      });
    }

    // rows of both operands are softmaxed; returns sum over rows of
    // KL(softmax(p_logits_row) || softmax(q_logits_row)), probabilities
    // floored at 1e-12 inside the logs
    Id kl_softmax_rows(Id p_logits, Id q_logits) {
        check_same_shape("kl_softmax", p_logits, q_logits);
        const auto& x = val(p_logits);
        if (x.rank() != 1 && x.rank() != 2)
            fail(ErrKind::kShape, "kl_softmax: expected rank 1 or 2, got " + shape_str(x.shape));
        int len = x.rank() == 1 ? x.shape[0] : x.cols();
        int rows = static_cast<int>(x.size()) / len;
        return record({p_logits, q_logits}, Shape{},
                      [len, rows](Graph& g, Node& n) {
                          const auto& ad = g.val(n.inputs[0]).data;
                          const auto& bd = g.val(n.inputs[1]).data;
                          double total = 0.0;
                          std::vector<double> p(len), q(len);
                          for (int r = 0; r < rows; ++r) {
                              softmax_row(ad.data() + static_cast<size_t>(r) * len, len, p.data());
                              softmax_row(bd.data() + static_cast<size_t>(r) * len, len, q.data());
                              for (int i = 0; i < len; ++i)
                                  total += p[i] * (std::log(std::max(p[i], kProbFloor)) -
                                                   std::log(std::max(q[i], kProbFloor)));
                          }
                          n.value.data[0] = T(total);
                      },
                      [len, rows](Graph& g, Node& n) {
                          const auto& ad = g.val(n.inputs[0]).data;
                          const auto& bd = g.val(n.inputs[1]).data;
                          double go = double(n.value.grad[0]);
                          bool wa = g.wants_grad(n.inputs[0]);
                          bool wb = g.wants_grad(n.inputs[1]);
                          std::vector<double> p(len), q(len), lr(len);
                          for (int r = 0; r < rows; ++r) {
                              softmax_row(ad.data() + static_cast<size_t>(r) * len, len, p.data());
                              softmax_row(bd.data() + static_cast<size_t>(r) * len, len, q.data());
                              double kl = 0.0;
                              for (int i = 0; i < len; ++i) {
                                  lr[i] = std::log(std::max(p[i], kProbFloor)) - std::log(std::max(q[i], kProbFloor));
                                  kl += p[i] * lr[i];
                              }
                              if (wa) {
                                  auto& ga = g.gbuf(n.inputs[0]);
                                  for (int i = 0; i < len; ++i)
                                      ga[static_cast<size_t>(r) * len + i] += T(go * p[i] * (lr[i] - kl));
                              }
                              if (wb) {
                                  auto& gb = g.gbuf(n.inputs[1]);
                                  for (int i = 0; i < len; ++i)
                                      gb[static_cast<size_t>(r) * len + i] += T(go * (q[i] - p[i]));
                              }
                          }
                      });
    }

    // ---- execution ----

    void rebind(const std::string& name, const Tensor<T>& value) {
        auto it = inputs_by_name_.find(name);
        if (it == inputs_by_name_.end()) fail(ErrKind::kConfig, "graph: no input named '" + name + "'");
        Node& n = nodes_[it->second];
        if (value.shape != n.value.shape)
            fail(ErrKind::kShape, "graph: rebind '" + name + "' expects " + shape_str(n.value.shape) + ", got " +
                                      shape_str(value.shape));
        n.value.data = value.data;
    }

    void recompute() {
        for (Node& n : nodes_)
            if (n.compute) n.compute(*this, n);
    }

    void backward(Id scalar_output) {
        Node& out = node(scalar_output);
        if (!(out.value.size() == 1 && out.value.rank() == 0))
            fail(ErrKind::kShape,
                 "gradient: output must be a scalar, got shape " + shape_str(out.value.shape));
        for (Node& n : nodes_)
            if (!n.value.grad.empty()) std::fill(n.value.grad.begin(), n.value.grad.end(), T(0));
        gbuf(scalar_output)[0] = T(1);
        for (Id id = scalar_output; id >= 0; --id) {
            Node& n = nodes_[id];
            if (!n.needs_grad || n.value.grad.empty() || !n.backprop) continue;
            n.backprop(*this, n);
        }
    }

    const Tensor<T>& value(Id id) const { return node(id).value; }

    const std::vector<T>& grad(Id id) const {
        const Node& n = node(id);
        if (n.value.grad.empty())
            fail(ErrKind::kConfig, "graph: no gradient recorded for node " + std::to_string(id));
        return n.value.grad;
    }

    Tensor<T> grad_tensor(Id id) const {
        Tensor<T> t(node(id).value.shape);
        t.data = grad(id);
        return t;
    }

    size_t node_count() const { return nodes_.size(); }

    Id input_id(const std::string& name) const {
        auto it = inputs_by_name_.find(name);
        if (it == inputs_by_name_.end()) fail(ErrKind::kConfig, "graph: no input named '" + name + "'");
        return it->second;
    }

   private:
    static constexpr double kGeluK = 0.7978845608028653558;  // sqrt(2/pi)
    static constexpr double kGeluC = 0.044715;
    static constexpr double kCosGuard = 1e-12;
    static constexpr double kProbFloor = 1e-12;

    struct Node {
        std::string name;  // named inputs only
        Tensor<T> value;   // value.grad doubles as the backward buffer
        bool needs_grad = false;
        std::vector<Id> inputs;
        std::function<void(Graph&, Node&)> compute;
        std::function<void(Graph&, Node&)> backprop;
    };

    static void softmax_row(const T* row, int len, double* out) {
        double mx = -1e300;
        for (int i = 0; i < len; ++i) mx = std::max(mx, double(row[i]));
        double denom = 0.0;
        for (int i = 0; i < len; ++i) denom += std::exp(double(row[i]) - mx);
        for (int i = 0; i < len; ++i) out[i] = std::exp(double(row[i]) - mx) / denom;
    }

    Node& node(Id id) {
        if (id < 0 || id >= static_cast<Id>(nodes_.size()))
            fail(ErrKind::kConfig, "graph: invalid node id " + std::to_string(id));
        return nodes_[id];
    }
    const Node& node(Id id) const { return const_cast<Graph*>(this)->node(id); }

    const Tensor<T>& val(Id id) const { return node(id).value; }

    bool wants_grad(Id id) const { return node(id).needs_grad; }

    std::vector<T>& gbuf(Id id) {
        Node& n = node(id);
        if (n.value.grad.empty()) n.value.grad.assign(n.value.size(), T(0));
        return n.value.grad;
    }

    void accumulate(Id id, const std::vector<T>& g) {
        if (!wants_grad(id)) return;
        auto& buf = gbuf(id);
        for (size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
    }

    void check_same_shape(const char* op, Id a, Id b) const {
        if (!val(a).same_shape(val(b)))
            fail(ErrKind::kShape, std::string(op) + ": shape mismatch " + shape_str(val(a).shape) + " vs " +
                                      shape_str(val(b).shape));
    }

    void check_vector_pair(const char* op, Id a, Id b) const {
        const auto& x = val(a);
        const auto& y = val(b);
        if (x.size() != y.size() || x.size() == 0)
            fail(ErrKind::kShape, std::string(op) + ": shape mismatch " + shape_str(x.shape) + " vs " +
                                      shape_str(y.shape));
        if (x.rank() > 2 || y.rank() > 2 ||
            (x.rank() == 2 && std::min(x.rows(), x.cols()) != 1) ||
            (y.rank() == 2 && std::min(y.rows(), y.cols()) != 1))
            fail(ErrKind::kShape, std::string(op) + ": expected vectors, got " + shape_str(x.shape) + " and " +
                                      shape_str(y.shape));
    }

    Id record(std::vector<Id> inputs, Shape out_shape, std::function<void(Graph&, Node&)> compute,
              std::function<void(Graph&, Node&)> backprop) {
        Node n;
        n.value = Tensor<T>(std::move(out_shape));
        n.inputs = std::move(inputs);
        for (Id i : n.inputs) {
            if (i < 0 || i >= static_cast<Id>(nodes_.size()))
                fail(ErrKind::kConfig, "graph: op references invalid node id " + std::to_string(i));
            if (nodes_[i].needs_grad) n.needs_grad = true;
        }
        n.compute = std::move(compute);
        if (n.needs_grad) n.backprop = std::move(backprop);
        nodes_.push_back(std::move(n));
        Id id = static_cast<Id>(nodes_.size()) - 1;
        nodes_[id].compute(*this, nodes_[id]);
        return id;
    }

    std::vector<Node> nodes_;
    std::unordered_map<std::string, Id> inputs_by_name_;
    std::vector<double> scratch_;  // matmul accumulator, reused across calls
};

}  // namespace vtforge
