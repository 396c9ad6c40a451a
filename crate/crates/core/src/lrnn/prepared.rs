use crate::lattice::{Lattice, LatticeError, MAX_FRAMES};

/// Arc features in sparse form: `[am, lm, duration / MAX_FRAMES]` plus the
/// index of the single hot lexical bucket.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct PArc {
    pub src: usize,
    pub dst: usize,
    pub dense: [f64; 3],
    pub bucket: usize,
}

/// A validated lattice with its topological order and adjacency resolved,
/// ready for repeated encoder passes.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedLattice {
    pub(crate) num_nodes: usize,
    pub(crate) start: usize,
    pub(crate) end: usize,
    pub(crate) order: Vec<usize>,
    pub(crate) incoming: Vec<Vec<usize>>,
    pub(crate) outgoing: Vec<Vec<usize>>,
    pub(crate) arcs: Vec<PArc>,
}

impl PreparedLattice {
    pub fn new(l: &Lattice) -> Result<Self, LatticeError> {
        let topo = l.topology()?;
        Ok(Self {
            num_nodes: l.num_nodes as usize,
            start: l.start as usize,
            end: l.end as usize,
            order: topo.order.iter().map(|&v| v as usize).collect(),
            incoming: topo.incoming,
            outgoing: topo.outgoing,
            arcs: l
                .arcs
                .iter()
                .map(|a| PArc {
                    src: a.src as usize,
                    dst: a.dst as usize,
                    dense: [a.features.am_score, a.features.lm_score, f64::from(a.features.duration) / MAX_FRAMES],
                    bucket: a.features.word_embed_index,
                })
                .collect(),
        })
    }

    pub fn num_arcs(&self) -> usize {
        self.arcs.len()
    }
}
