//! Boykov–Kolmogorov max-flow: bidirectional augmenting-path search whose
//! search trees are kept and repaired between augmentations instead of
//! being rebuilt.

use std::collections::VecDeque;

const NONE: u32 = u32::MAX;
const TERMINAL: u32 = u32::MAX - 1;
const ORPHAN: u32 = u32::MAX - 2;
const INFINITE_D: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Segment {
    Source,
    Sink,
}

#[derive(Clone, Debug)]
struct Node {
    first: u32,
    parent: u32,
    /// Residual terminal capacity: positive towards the source, negative
    /// towards the sink.
    tr_cap: f64,
    is_sink: bool,
    active: bool,
    ts: u32,
    dist: u32,
}

#[derive(Clone, Debug)]
struct Arc {
    head: u32,
    next: u32,
    r_cap: f64,
}

/// Directed graph with source/sink terminal links. Arcs are stored in
/// sister pairs: arc `a` and arc `a ^ 1` are reverses of each other.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    arcs: Vec<Arc>,
    flow: f64,
}

impl Graph {
    pub fn new(nodes: usize, edges_hint: usize) -> Self {
        Graph {
            nodes: vec![
                Node {
                    first: NONE,
                    parent: NONE,
                    tr_cap: 0.0,
                    is_sink: false,
                    active: false,
                    ts: 0,
                    dist: 0,
                };
                nodes
            ],
            arcs: Vec::with_capacity(2 * edges_hint),
            flow: 0.0,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Adds capacities `source → i` and `i → sink`.
    pub fn add_terminal(&mut self, i: usize, to_source: f64, to_sink: f64) {
        debug_assert!(to_source >= 0.0 && to_sink >= 0.0);
        let (mut cs, mut ct) = (to_source, to_sink);
        let node = &mut self.nodes[i];
        if node.tr_cap > 0.0 {
            cs += node.tr_cap;
        } else {
            ct -= node.tr_cap;
        }
        self.flow += cs.min(ct);
        node.tr_cap = cs - ct;
    }

    /// Adds arc `i → j` with capacity `cap` and `j → i` with `rev_cap`.
    pub fn add_edge(&mut self, i: usize, j: usize, cap: f64, rev_cap: f64) {
        debug_assert!(i != j && cap >= 0.0 && rev_cap >= 0.0);
        let a = self.arcs.len() as u32;
        self.arcs.push(Arc {
            head: j as u32,
            next: self.nodes[i].first,
            r_cap: cap,
        });
        self.arcs.push(Arc {
            head: i as u32,
            next: self.nodes[j].first,
            r_cap: rev_cap,
        });
        self.nodes[i].first = a;
        self.nodes[j].first = a + 1;
    }

    /// Side of the minimum cut node `i` ends up on after [`Graph::max_flow`].
    /// Nodes reachable from neither terminal are reported on the source side.
    pub fn segment(&self, i: usize) -> Segment {
        let n = &self.nodes[i];
        if n.parent != NONE && n.is_sink {
            Segment::Sink
        } else {
            Segment::Source
        }
    }

    /// Computes the maximum flow and returns its value.
    pub fn max_flow(&mut self) -> f64 {
        let mut solver = Solver {
            g: self,
            queue: VecDeque::new(),
            orphans: VecDeque::new(),
            time: 0,
        };
        solver.run();
        self.flow
    }
}

struct Solver<'a> {
    g: &'a mut Graph,
    queue: VecDeque<u32>,
    orphans: VecDeque<u32>,
    time: u32,
}

#[inline]
fn sister(a: u32) -> u32 {
    a ^ 1
}

impl Solver<'_> {
    fn set_active(&mut self, i: u32) {
        let n = &mut self.g.nodes[i as usize];
        if !n.active {
            n.active = true;
            self.queue.push_back(i);
        }
    }

    fn next_active(&mut self) -> Option<u32> {
        while let Some(i) = self.queue.pop_front() {
            let n = &mut self.g.nodes[i as usize];
            n.active = false;
            if n.parent != NONE {
                return Some(i);
            }
        }
        None
    }

    fn set_orphan_front(&mut self, i: u32) {
        self.g.nodes[i as usize].parent = ORPHAN;
        self.orphans.push_front(i);
    }

    fn set_orphan_rear(&mut self, i: u32) {
        self.g.nodes[i as usize].parent = ORPHAN;
        self.orphans.push_back(i);
    }

    fn run(&mut self) {
        for i in 0..self.g.nodes.len() {
            let n = &mut self.g.nodes[i];
            n.ts = 0;
            n.active = false;
            if n.tr_cap != 0.0 {
                n.is_sink = n.tr_cap < 0.0;
                n.parent = TERMINAL;
                n.dist = 1;
                self.set_active(i as u32);
            } else {
                n.parent = NONE;
            }
        }

        let mut current: Option<u32> = None;
        loop {
            let i = match current.take() {
                Some(c) => {
                    self.g.nodes[c as usize].active = false;
                    if self.g.nodes[c as usize].parent != NONE {
                        c
                    } else {
                        match self.next_active() {
                            Some(i) => i,
                            None => break,
                        }
                    }
                }
                None => match self.next_active() {
                    Some(i) => i,
                    None => break,
                },
            };

            let middle = self.grow(i);
            self.time = self.time.wrapping_add(1);
            if let Some(a) = middle {
                // Keep `i` as the current node; it may have more paths.
                self.g.nodes[i as usize].active = true;
                current = Some(i);
                self.augment(a);
                while let Some(o) = self.orphans.pop_front() {
                    if self.g.nodes[o as usize].is_sink {
                        self.process_sink_orphan(o);
                    } else {
                        self.process_source_orphan(o);
                    }
                }
            }
        }
    }

    /// Grows the tree of `i` by one layer; returns an arc from the source
    /// tree into the sink tree if the trees touch.
    fn grow(&mut self, i: u32) -> Option<u32> {
        let (is_sink, ts, dist) = {
            let n = &self.g.nodes[i as usize];
            (n.is_sink, n.ts, n.dist)
        };
        let mut a = self.g.nodes[i as usize].first;
        while a != NONE {
            let arc_cap = if is_sink {
                self.g.arcs[sister(a) as usize].r_cap
            } else {
                self.g.arcs[a as usize].r_cap
            };
            if arc_cap > 0.0 {
                let j = self.g.arcs[a as usize].head;
                let nj = &mut self.g.nodes[j as usize];
                if nj.parent == NONE {
                    nj.is_sink = is_sink;
                    nj.parent = sister(a);
                    nj.ts = ts;
                    nj.dist = dist + 1;
                    self.set_active(j);
                } else if nj.is_sink != is_sink {
                    return Some(if is_sink { sister(a) } else { a });
                } else if nj.ts <= ts && nj.dist > dist {
                    nj.parent = sister(a);
                    nj.ts = ts;
                    nj.dist = dist + 1;
                }
            }
            a = self.g.arcs[a as usize].next;
        }
        None
    }

    fn augment(&mut self, middle: u32) {
        let arcs = &self.g.arcs;
        let nodes = &self.g.nodes;
        let mut bottleneck = arcs[middle as usize].r_cap;
        let mut i = arcs[sister(middle) as usize].head;
        loop {
            let a = nodes[i as usize].parent;
            if a == TERMINAL {
                break;
            }
            bottleneck = bottleneck.min(arcs[sister(a) as usize].r_cap);
            i = arcs[a as usize].head;
        }
        bottleneck = bottleneck.min(nodes[i as usize].tr_cap);
        let mut i = arcs[middle as usize].head;
        loop {
            let a = nodes[i as usize].parent;
            if a == TERMINAL {
                break;
            }
            bottleneck = bottleneck.min(arcs[a as usize].r_cap);
            i = arcs[a as usize].head;
        }
        bottleneck = bottleneck.min(-nodes[i as usize].tr_cap);

        self.g.arcs[sister(middle) as usize].r_cap += bottleneck;
        self.g.arcs[middle as usize].r_cap -= bottleneck;

        let mut i = self.g.arcs[sister(middle) as usize].head;
        loop {
            let a = self.g.nodes[i as usize].parent;
            if a == TERMINAL {
                break;
            }
            self.g.arcs[a as usize].r_cap += bottleneck;
            self.g.arcs[sister(a) as usize].r_cap -= bottleneck;
            if self.g.arcs[sister(a) as usize].r_cap <= 0.0 {
                self.g.arcs[sister(a) as usize].r_cap = 0.0;
                self.set_orphan_front(i);
            }
            i = self.g.arcs[a as usize].head;
        }
        self.g.nodes[i as usize].tr_cap -= bottleneck;
        if self.g.nodes[i as usize].tr_cap <= 0.0 {
            self.g.nodes[i as usize].tr_cap = 0.0;
            self.set_orphan_front(i);
        }

        let mut i = self.g.arcs[middle as usize].head;
        loop {
            let a = self.g.nodes[i as usize].parent;
            if a == TERMINAL {
                break;
            }
            self.g.arcs[sister(a) as usize].r_cap += bottleneck;
            self.g.arcs[a as usize].r_cap -= bottleneck;
            if self.g.arcs[a as usize].r_cap <= 0.0 {
                self.g.arcs[a as usize].r_cap = 0.0;
                self.set_orphan_front(i);
            }
            i = self.g.arcs[a as usize].head;
        }
        self.g.nodes[i as usize].tr_cap += bottleneck;
        if self.g.nodes[i as usize].tr_cap >= 0.0 {
            self.g.nodes[i as usize].tr_cap = 0.0;
            self.set_orphan_front(i);
        }

        self.g.flow += bottleneck;
    }

    /// Distance from `j` to its terminal through valid parents, or `None`
    /// if its chain ends in an orphan. Marks the chain with the current time.
    fn origin_distance(&mut self, start: u32) -> Option<u32> {
        let mut j = start;
        let mut d: u32 = 0;
        loop {
            let nj = &self.g.nodes[j as usize];
            if nj.ts == self.time {
                d += nj.dist;
                break;
            }
            let a = nj.parent;
            d += 1;
            if a == TERMINAL {
                let nj = &mut self.g.nodes[j as usize];
                nj.ts = self.time;
                nj.dist = 1;
                break;
            }
            if a == ORPHAN || a == NONE {
                return None;
            }
            j = self.g.arcs[a as usize].head;
        }
        let mut j = start;
        let mut dd = d;
        while self.g.nodes[j as usize].ts != self.time {
            let nj = &mut self.g.nodes[j as usize];
            nj.ts = self.time;
            nj.dist = dd;
            dd -= 1;
            j = self.g.arcs[nj.parent as usize].head;
        }
        Some(d)
    }

    fn process_orphan(&mut self, i: u32, sink_side: bool) {
        let mut best_arc = NONE;
        let mut best_d = INFINITE_D;
        let mut a0 = self.g.nodes[i as usize].first;
        while a0 != NONE {
            // Residual capacity from the candidate parent towards `i`
            // (source tree) or from `i` towards it (sink tree).
            let cap = if sink_side {
                self.g.arcs[a0 as usize].r_cap
            } else {
                self.g.arcs[sister(a0) as usize].r_cap
            };
            if cap > 0.0 {
                let j = self.g.arcs[a0 as usize].head;
                let nj = &self.g.nodes[j as usize];
                if nj.is_sink == sink_side && nj.parent != NONE {
                    if let Some(d) = self.origin_distance(j) {
                        if d < best_d {
                            best_d = d;
                            best_arc = a0;
                        }
                    }
                }
            }
            a0 = self.g.arcs[a0 as usize].next;
        }

        if best_arc != NONE {
            let n = &mut self.g.nodes[i as usize];
            n.parent = best_arc;
            n.ts = self.time;
            n.dist = best_d + 1;
            return;
        }

        let n = &mut self.g.nodes[i as usize];
        n.parent = NONE;
        n.ts = 0;
        let mut a0 = self.g.nodes[i as usize].first;
        while a0 != NONE {
            let j = self.g.arcs[a0 as usize].head;
            let (j_sink, j_parent) = {
                let nj = &self.g.nodes[j as usize];
                (nj.is_sink, nj.parent)
            };
            if j_sink == sink_side && j_parent != NONE {
                let cap = if sink_side {
                    self.g.arcs[a0 as usize].r_cap
                } else {
                    self.g.arcs[sister(a0) as usize].r_cap
                };
                if cap > 0.0 {
                    self.set_active(j);
                }
                if j_parent != TERMINAL
                    && j_parent != ORPHAN
                    && self.g.arcs[j_parent as usize].head == i
                {
                    self.set_orphan_rear(j);
                }
            }
            a0 = self.g.arcs[a0 as usize].next;
        }
    }

    fn process_source_orphan(&mut self, i: u32) {
        self.process_orphan(i, false);
    }

    fn process_sink_orphan(&mut self, i: u32) {
        self.process_orphan(i, true);
    }
}
