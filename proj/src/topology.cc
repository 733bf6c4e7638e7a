#include "iod/topology.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "iod/error.h"

namespace iod {
namespace {

struct Member {
  std::size_t query;
  double weight;
};

struct Aggregate {
  PrototypeSet set;
  // Parallel to set.prototypes: contributing queries and their weights.
  std::vector<std::vector<Member>> members;
};

Aggregate aggregate(const Matrix& features, const ScalePartition& part,
                    const QueryLabels& labels) {
  Require(labels.size() == features.rows(), ErrorCode::kShapeMismatch,
          "prototype aggregation: labels (" + std::to_string(labels.size()) +
              ") != feature rows (" + std::to_string(features.rows()) + ")");
  const std::size_t dim = features.cols();
  Aggregate out;
  for (ScaleBucket bucket : kAllBuckets) {
    // class id -> (score sum, queries); std::map keeps class ids ascending.
    std::map<int, std::pair<double, std::vector<std::size_t>>> groups;
    for (std::size_t i : part[bucket]) {
      Require(i < labels.size(), ErrorCode::kShapeMismatch,
              "prototype aggregation: partition index out of range");
      if (!labels[i]) continue;
      const QueryLabel& label = *labels[i];
      Require(label.score >= 0.0 && label.score <= 1.0,
              ErrorCode::kInvalidArgument,
              "prototype aggregation: score outside [0, 1]");
      auto& group = groups[label.class_id];
      group.first += label.score;
      group.second.push_back(i);
    }
    for (const auto& [class_id, group] : groups) {
      const double total = group.first;
      if (!(total > 0.0)) {
        out.set.excluded.push_back({class_id, bucket});
        continue;
      }
      Prototype proto{class_id, bucket, std::vector<double>(dim, 0.0),
                      group.second.size()};
      std::vector<Member> members;
      for (std::size_t i : group.second) {
        const double w = labels[i]->score / total;
        members.push_back({i, w});
        const auto f = features.row(i);
        for (std::size_t d = 0; d < dim; ++d) proto.vector[d] += w * f[d];
      }
      out.set.prototypes.push_back(std::move(proto));
      out.members.push_back(std::move(members));
    }
  }
  return out;
}

// Row-wise log-softmax of -distances / temperature.
Matrix log_affinity(const Matrix& distances, double temperature) {
  const std::size_t n = distances.rows();
  Matrix out(n, n);
  for (std::size_t u = 0; u < n; ++u) {
    double peak = -distances(u, 0) / temperature;
    for (std::size_t v = 1; v < n; ++v) {
      peak = std::max(peak, -distances(u, v) / temperature);
    }
    double sum = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
      sum += std::exp(-distances(u, v) / temperature - peak);
    }
    const double log_norm = peak + std::log(sum);
    for (std::size_t v = 0; v < n; ++v) {
      out(u, v) = -distances(u, v) / temperature - log_norm;
    }
  }
  return out;
}

double kl_rows(const RelationTopology& teacher,
               const RelationTopology& student) {
  const Matrix log_t = log_affinity(teacher.distances, teacher.temperature);
  const Matrix log_s = log_affinity(student.distances, student.temperature);
  double total = 0.0;
  for (std::size_t u = 0; u < log_t.rows(); ++u) {
    for (std::size_t v = 0; v < log_t.cols(); ++v) {
      total += std::exp(log_t(u, v)) * (log_t(u, v) - log_s(u, v));
    }
  }
  return total;
}

void check_aligned(const RelationTopology& teacher,
                   const RelationTopology& student) {
  Require(teacher.node_ids == student.node_ids, ErrorCode::kShapeMismatch,
          "topology loss: teacher and student node sets differ in bucket " +
              std::string(to_string(teacher.bucket)));
  Require(teacher.temperature == student.temperature,
          ErrorCode::kInvalidArgument,
          "topology loss: teacher and student temperatures differ");
}

}  // namespace

std::vector<Prototype> PrototypeSet::in_bucket(ScaleBucket bucket) const {
  std::vector<Prototype> out;
  for (const Prototype& p : prototypes) {
    if (p.bucket == bucket) out.push_back(p);
  }
  return out;
}

PrototypeSet aggregate_prototypes(const Matrix& features,
                                  const ScalePartition& part,
                                  const QueryLabels& labels) {
  return aggregate(features, part, labels).set;
}

PrototypeSet aggregate_prototypes(const QueryBatch& batch,
                                  const ScalePartition& part,
                                  const QueryLabels& labels) {
  batch.validate();
  return aggregate(batch.features, part, labels).set;
}

BackgroundAnchor background_anchor(const FeatureMap& map) {
  Require(map.height >= 1 && map.width >= 1 && map.depth >= 1,
          ErrorCode::kInvalidArgument, "background anchor: empty feature map");
  Require(map.values.size() == map.height * map.width * map.depth,
          ErrorCode::kShapeMismatch,
          "background anchor: feature map storage does not match H x W x D");
  BackgroundAnchor anchor{std::vector<double>(map.depth, 0.0)};
  for (std::size_t y = 0; y < map.height; ++y) {
    for (std::size_t x = 0; x < map.width; ++x) {
      for (std::size_t d = 0; d < map.depth; ++d) {
        anchor.vector[d] += map.at(y, x, d);
      }
    }
  }
  const double cells = static_cast<double>(map.height * map.width);
  for (double& v : anchor.vector) v /= cells;
  return anchor;
}

std::optional<RelationTopology> relation_topology(
    std::span<const Prototype> protos,
    const std::optional<BackgroundAnchor>& anchor, double temperature) {
  Require(std::isfinite(temperature) && temperature > 0.0,
          ErrorCode::kInvalidArgument,
          "relation topology: temperature must be positive");
  if (protos.size() < 2) return std::nullopt;

  const std::size_t dim = protos.front().vector.size();
  for (const Prototype& p : protos) {
    Require(p.bucket == protos.front().bucket, ErrorCode::kInvalidArgument,
            "relation topology: prototypes from different buckets");
    Require(p.vector.size() == dim, ErrorCode::kShapeMismatch,
            "relation topology: prototype dimensions differ");
  }
  if (anchor) {
    Require(anchor->vector.size() == dim, ErrorCode::kShapeMismatch,
            "relation topology: anchor dimension differs from prototypes");
  }

  RelationTopology topo;
  topo.bucket = protos.front().bucket;
  topo.temperature = temperature;
  const std::size_t n = protos.size() + (anchor ? 1 : 0);
  topo.nodes = Matrix(n, dim);
  for (std::size_t u = 0; u < protos.size(); ++u) {
    topo.node_ids.push_back(protos[u].class_id);
    std::copy(protos[u].vector.begin(), protos[u].vector.end(),
              topo.nodes.row(u).begin());
  }
  if (anchor) {
    topo.node_ids.push_back(kBackgroundNode);
    std::copy(anchor->vector.begin(), anchor->vector.end(),
              topo.nodes.row(n - 1).begin());
  }

  topo.distances = Matrix(n, n);
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = u + 1; v < n; ++v) {
      double sq = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double diff = topo.nodes(u, d) - topo.nodes(v, d);
        sq += diff * diff;
      }
      topo.distances(u, v) = topo.distances(v, u) = std::sqrt(sq);
    }
  }

  const Matrix log_p = log_affinity(topo.distances, temperature);
  topo.affinity = Matrix(n, n);
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = 0; v < n; ++v) topo.affinity(u, v) = std::exp(log_p(u, v));
  }
  return topo;
}

double std_loss(std::span<const RelationTopology> teacher,
                std::span<const RelationTopology> student) {
  Require(teacher.size() == student.size(), ErrorCode::kShapeMismatch,
          "topology loss: teacher and student cover different buckets");
  double total = 0.0;
  for (ScaleBucket bucket : kAllBuckets) {
    const RelationTopology* t = nullptr;
    const RelationTopology* s = nullptr;
    for (const auto& topo : teacher) {
      if (topo.bucket == bucket) {
        Require(t == nullptr, ErrorCode::kInvalidArgument,
                "topology loss: duplicate teacher bucket");
        t = &topo;
      }
    }
    for (const auto& topo : student) {
      if (topo.bucket == bucket) {
        Require(s == nullptr, ErrorCode::kInvalidArgument,
                "topology loss: duplicate student bucket");
        s = &topo;
      }
    }
    Require((t == nullptr) == (s == nullptr), ErrorCode::kShapeMismatch,
            "topology loss: bucket " + std::string(to_string(bucket)) +
                " present on one side only");
    if (t == nullptr) continue;
    check_aligned(*t, *s);
    total += t->temperature * t->temperature * kl_rows(*t, *s);
  }
  return total;
}

void StdConfig::validate() const {
  Require(std::isfinite(temperature) && temperature > 0.0,
          ErrorCode::kInvalidArgument, "std.temperature must be positive");
  scale.validate();
}

StdResult std_loss_and_grad(const QueryBatch& teacher,
                            const QueryBatch& student,
                            const QueryLabels& labels,
                            const ScalePartition& part, const StdConfig& cfg) {
  cfg.validate();
  Require(teacher.features.rows() == student.features.rows() &&
              teacher.features.cols() == student.features.cols(),
          ErrorCode::kShapeMismatch,
          "topology loss: teacher and student feature shapes differ");
  Require(part.total() == student.features.rows(), ErrorCode::kShapeMismatch,
          "topology loss: partition does not cover the batch");

  std::optional<BackgroundAnchor> anchor_t, anchor_s;
  if (cfg.include_background_anchor) {
    Require(teacher.image_features.has_value() ==
                student.image_features.has_value(),
            ErrorCode::kShapeMismatch,
            "topology loss: image feature map present on one side only");
    if (teacher.image_features) {
      anchor_t = background_anchor(*teacher.image_features);
      anchor_s = background_anchor(*student.image_features);
    }
  }

  const Aggregate agg_t = aggregate(teacher.features, part, labels);
  const Aggregate agg_s = aggregate(student.features, part, labels);

  StdResult out;
  out.grad = Matrix(student.features.rows(), student.features.cols());
  const double tau = cfg.temperature;
  const std::size_t dim = student.features.cols();

  for (ScaleBucket bucket : kAllBuckets) {
    std::vector<Prototype> protos_t, protos_s;
    std::vector<const std::vector<Member>*> members;
    for (std::size_t p = 0; p < agg_s.set.prototypes.size(); ++p) {
      if (agg_s.set.prototypes[p].bucket != bucket) continue;
      protos_t.push_back(agg_t.set.prototypes[p]);
      protos_s.push_back(agg_s.set.prototypes[p]);
      members.push_back(&agg_s.members[p]);
    }
    const auto topo_t = relation_topology(protos_t, anchor_t, tau);
    const auto topo_s = relation_topology(protos_s, anchor_s, tau);
    if (!topo_t || !topo_s) continue;
    check_aligned(*topo_t, *topo_s);

    const std::size_t b = static_cast<std::size_t>(bucket);
    out.bucket_active[b] = true;
    out.bucket_loss[b] = tau * tau * kl_rows(*topo_t, *topo_s);
    out.loss += out.bucket_loss[b];

    // d L / d M_uv through row u's softmax: -tau (P_S,uv - P_T,uv). M_uv and
    // M_vu are one quantity, so both rows feed each unordered pair.
    const std::size_t n = topo_s->node_ids.size();
    Matrix g(n, n);
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t v = 0; v < n; ++v) {
        g(u, v) = -tau * (topo_s->affinity(u, v) - topo_t->affinity(u, v));
      }
    }
    const std::size_t classes = protos_s.size();
    for (std::size_t u = 0; u < classes; ++u) {
      std::vector<double> d_proto(dim, 0.0);
      for (std::size_t v = 0; v < n; ++v) {
        const double dist = topo_s->distances(u, v);
        if (v == u || dist == 0.0) continue;
        const double coeff = (g(u, v) + g(v, u)) / dist;
        for (std::size_t d = 0; d < dim; ++d) {
          d_proto[d] += coeff * (topo_s->nodes(u, d) - topo_s->nodes(v, d));
        }
      }
      for (const Member& m : *members[u]) {
        auto row = out.grad.row(m.query);
        for (std::size_t d = 0; d < dim; ++d) row[d] += m.weight * d_proto[d];
      }
    }
  }
  return out;
}

}  // namespace iod
