//! MiniGrid-style sparse-reward grids with four actions.
//!
//! Grids always carry an outer ring of walls, so an `Empty-6x6` grid has a
//! 4x4 floor. Coordinates are `(x, y)` with `y` growing downwards; the state
//! encoding indexes only the interior `1..=width-2` / `1..=height-2`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Environment, FactoredSpace, StepOutcome, TabularMdp};

pub type Cell = (usize, usize);

/// Default cap on enumerated states for [`to_tabular`].
pub const DEFAULT_STATE_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    East,
    South,
    West,
    North,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::East, Direction::South, Direction::West, Direction::North];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Direction {
        Self::ALL[i % 4]
    }

    fn left(self) -> Direction {
        Self::from_index(self.index() + 3)
    }

    fn right(self) -> Direction {
        Self::from_index(self.index() + 1)
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Direction::East => (1, 0),
            Direction::South => (0, 1),
            Direction::West => (-1, 0),
            Direction::North => (0, -1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GridAction {
    TurnLeft,
    TurnRight,
    Forward,
    Stay,
}

impl GridAction {
    pub const COUNT: usize = 4;
    pub const ALL: [GridAction; 4] = [GridAction::TurnLeft, GridAction::TurnRight, GridAction::Forward, GridAction::Stay];

    pub fn from_index(i: usize) -> GridAction {
        Self::ALL[i]
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WallOrientation {
    Vertical,
    Horizontal,
}

/// An opening in a wall line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Passage {
    pub cell: Cell,
    pub orientation: WallOrientation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GoalMode {
    Fixed(Cell),
    /// Drawn uniformly over floor cells at every reset; part of the state.
    RandomPerEpisode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StartMode {
    Fixed(Cell, Direction),
    /// Uniform floor cell (never the goal) and uniform direction.
    RandomPerEpisode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    /// Row-major, `walls[y * width + x]`.
    pub walls: Vec<bool>,
    pub passages: Vec<Passage>,
    pub goal_mode: GoalMode,
    pub start_mode: StartMode,
}

impl GridSpec {
    /// Grid with only the outer wall ring.
    pub fn bordered(width: usize, height: usize, goal_mode: GoalMode, start_mode: StartMode) -> Self {
        let mut walls = vec![false; width * height];
        for y in 0..height {
            for x in 0..width {
                if x == 0 || y == 0 || x + 1 == width || y + 1 == height {
                    walls[y * width + x] = true;
                }
            }
        }
        Self {
            width,
            height,
            walls,
            passages: Vec::new(),
            goal_mode,
            start_mode,
        }
    }

    pub fn is_wall(&self, (x, y): Cell) -> bool {
        x >= self.width || y >= self.height || self.walls[y * self.width + x]
    }

    fn set_wall(&mut self, (x, y): Cell, wall: bool) {
        self.walls[y * self.width + x] = wall;
    }

    pub fn floor_cells(&self) -> Vec<Cell> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .filter(|&c| !self.is_wall(c))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 3 || self.height < 3 {
            return Err(Error::InvalidGrid("grid needs at least one interior cell".into()));
        }
        if self.walls.len() != self.width * self.height {
            return Err(Error::InvalidGrid("wall mask has wrong size".into()));
        }
        for x in 0..self.width {
            for y in [0, self.height - 1] {
                if !self.is_wall((x, y)) {
                    return Err(Error::InvalidGrid(format!("border cell ({x}, {y}) is not a wall")));
                }
            }
        }
        for y in 0..self.height {
            for x in [0, self.width - 1] {
                if !self.is_wall((x, y)) {
                    return Err(Error::InvalidGrid(format!("border cell ({x}, {y}) is not a wall")));
                }
            }
        }
        for p in &self.passages {
            let (x, y) = p.cell;
            if self.is_wall(p.cell) {
                return Err(Error::InvalidGrid(format!("passage ({x}, {y}) is blocked")));
            }
            // the passage must sit on a wall line of its orientation
            let on_line = match p.orientation {
                WallOrientation::Vertical => self.is_wall((x, y - 1)) && self.is_wall((x, y + 1)),
                WallOrientation::Horizontal => self.is_wall((x - 1, y)) && self.is_wall((x + 1, y)),
            };
            if !on_line {
                return Err(Error::InvalidGrid(format!("passage ({x}, {y}) is not on a wall segment")));
            }
        }
        if self.floor_cells().len() < 2 {
            return Err(Error::InvalidGrid("grid needs at least two floor cells".into()));
        }
        if let GoalMode::Fixed(g) = self.goal_mode {
            if self.is_wall(g) {
                return Err(Error::InvalidGrid("goal is a wall cell".into()));
            }
        }
        if let StartMode::Fixed(s, _) = self.start_mode {
            if self.is_wall(s) {
                return Err(Error::InvalidGrid("start is a wall cell".into()));
            }
            if self.goal_mode == GoalMode::Fixed(s) {
                return Err(Error::InvalidGrid("start coincides with goal".into()));
            }
        }
        Ok(())
    }

    /// `Empty-NxN`: start at (1, 1) facing east, goal in the opposite corner.
    pub fn empty(size: usize) -> Self {
        Self::bordered(
            size,
            size,
            GoalMode::Fixed((size - 2, size - 2)),
            StartMode::Fixed((1, 1), Direction::East),
        )
    }

    /// `SimpleCrossingS{size}N{crossings}`: `crossings` full-length walls at
    /// even coordinates, each with one passage placed so that the goal stays
    /// reachable from the start.
    pub fn simple_crossing<R: Rng + ?Sized>(size: usize, crossings: usize, rng: &mut R) -> Result<Self> {
        if size < 5 || size % 2 == 0 {
            return Err(Error::InvalidGrid(format!("crossing size {size} must be odd and at least 5")));
        }
        let mut spec = Self::empty(size);
        let mut rivers: Vec<(WallOrientation, usize)> = (2..size - 2)
            .step_by(2)
            .flat_map(|k| [(WallOrientation::Vertical, k), (WallOrientation::Horizontal, k)])
            .collect();
        if crossings == 0 || crossings > rivers.len() {
            return Err(Error::InvalidGrid(format!(
                "{crossings} crossings requested, between 1 and {} possible",
                rivers.len()
            )));
        }
        rivers.shuffle(rng);
        rivers.truncate(crossings);
        let mut vertical: Vec<usize> = rivers.iter().filter(|r| r.0 == WallOrientation::Vertical).map(|r| r.1).collect();
        let mut horizontal: Vec<usize> = rivers.iter().filter(|r| r.0 == WallOrientation::Horizontal).map(|r| r.1).collect();
        vertical.sort_unstable();
        horizontal.sort_unstable();
        for &x in &vertical {
            for y in 1..size - 1 {
                spec.set_wall((x, y), true);
            }
        }
        for &y in &horizontal {
            for x in 1..size - 1 {
                spec.set_wall((x, y), true);
            }
        }
        // A monotone path of rooms from the top-left to the bottom-right one.
        let mut path: Vec<WallOrientation> = std::iter::repeat_n(WallOrientation::Vertical, vertical.len())
            .chain(std::iter::repeat_n(WallOrientation::Horizontal, horizontal.len()))
            .collect();
        path.shuffle(rng);
        let limits_x: Vec<usize> = std::iter::once(0).chain(vertical.iter().copied()).chain([size - 1]).collect();
        let limits_y: Vec<usize> = std::iter::once(0).chain(horizontal.iter().copied()).chain([size - 1]).collect();
        let (mut room_x, mut room_y) = (0, 0);
        for orientation in path {
            let cell = match orientation {
                WallOrientation::Vertical => {
                    let x = limits_x[room_x + 1];
                    let y = rng.random_range(limits_y[room_y] + 1..limits_y[room_y + 1]);
                    room_x += 1;
                    (x, y)
                }
                WallOrientation::Horizontal => {
                    let x = rng.random_range(limits_x[room_x] + 1..limits_x[room_x + 1]);
                    let y = limits_y[room_y + 1];
                    room_y += 1;
                    (x, y)
                }
            };
            spec.set_wall(cell, false);
            spec.passages.push(Passage { cell, orientation });
        }
        Ok(spec)
    }

    /// `FourRooms`: 19x19, one passage per wall segment, random start and goal.
    pub fn four_rooms<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let size = 19;
        let room = size / 2;
        let mut spec = Self::bordered(size, size, GoalMode::RandomPerEpisode, StartMode::RandomPerEpisode);
        for k in 1..size - 1 {
            spec.set_wall((room, k), true);
            spec.set_wall((k, room), true);
        }
        for j in 0..2 {
            for i in 0..2 {
                let (left, top) = (i * room, j * room);
                if i == 0 {
                    let cell = (left + room, rng.random_range(top + 1..top + room));
                    spec.set_wall(cell, false);
                    spec.passages.push(Passage { cell, orientation: WallOrientation::Vertical });
                }
                if j == 0 {
                    let cell = (rng.random_range(left + 1..left + room), top + room);
                    spec.set_wall(cell, false);
                    spec.passages.push(Passage { cell, orientation: WallOrientation::Horizontal });
                }
            }
        }
        spec
    }

    /// Parses a plain-text map: `#` wall, `.` floor, `G` goal, `S` start
    /// (facing east). Without `G` (or `S`) the goal (or start) is random
    /// per episode.
    pub fn from_map(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        if rows.iter().any(|r| r.chars().count() != width) {
            return Err(Error::InvalidGrid("map rows have different lengths".into()));
        }
        let mut walls = Vec::with_capacity(width * height);
        let (mut goal, mut start) = (None, None);
        for (y, row) in rows.iter().enumerate() {
            for (x, ch) in row.chars().enumerate() {
                match ch {
                    '#' => walls.push(true),
                    '.' => walls.push(false),
                    'G' | 'S' => {
                        let slot = if ch == 'G' { &mut goal } else { &mut start };
                        if slot.replace((x, y)).is_some() {
                            return Err(Error::InvalidGrid(format!("more than one `{ch}` in map")));
                        }
                        walls.push(false);
                    }
                    other => return Err(Error::InvalidGrid(format!("unknown map character `{other}`"))),
                }
            }
        }
        let spec = Self {
            width,
            height,
            walls,
            passages: Vec::new(),
            goal_mode: goal.map_or(GoalMode::RandomPerEpisode, GoalMode::Fixed),
            start_mode: start.map_or(StartMode::RandomPerEpisode, |s| StartMode::Fixed(s, Direction::East)),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_map(&self) -> String {
        let mut out = String::new();
        for y in 0..self.height {
            for x in 0..self.width {
                let c = (x, y);
                out.push(if self.is_wall(c) {
                    '#'
                } else if self.goal_mode == GoalMode::Fixed(c) {
                    'G'
                } else if matches!(self.start_mode, StartMode::Fixed(s, _) if s == c) {
                    'S'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }
}

/// Registered environment ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvId {
    Empty(usize),
    SimpleCrossing { size: usize, crossings: usize },
    FourRooms,
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownEnvironment(s.to_string());
        if s == "FourRooms" {
            return Ok(EnvId::FourRooms);
        }
        if let Some(rest) = s.strip_prefix("Empty-") {
            let (w, h) = rest.split_once('x').ok_or_else(unknown)?;
            let (w, h): (usize, usize) = (w.parse().map_err(|_| unknown())?, h.parse().map_err(|_| unknown())?);
            if w != h || w < 4 {
                return Err(unknown());
            }
            return Ok(EnvId::Empty(w));
        }
        if let Some(rest) = s.strip_prefix("SimpleCrossingS") {
            let (size, n) = rest.split_once('N').ok_or_else(unknown)?;
            return Ok(EnvId::SimpleCrossing {
                size: size.parse().map_err(|_| unknown())?,
                crossings: n.parse().map_err(|_| unknown())?,
            });
        }
        Err(unknown())
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvId::Empty(n) => write!(f, "Empty-{n}x{n}"),
            EnvId::SimpleCrossing { size, crossings } => write!(f, "SimpleCrossingS{size}N{crossings}"),
            EnvId::FourRooms => write!(f, "FourRooms"),
        }
    }
}

/// Ids mirroring the benchmark suite.
pub const REGISTERED: [&str; 7] = [
    "Empty-6x6",
    "Empty-16x16",
    "SimpleCrossingS9N1",
    "SimpleCrossingS11N1",
    "SimpleCrossingS11N2",
    "SimpleCrossingS15N1",
    "FourRooms",
];

impl EnvId {
    /// Builds the layout; `seed` drives passage placement only.
    pub fn build_spec(self, seed: u64) -> Result<GridSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x6c61796f7574);
        let spec = match self {
            EnvId::Empty(n) => GridSpec::empty(n),
            EnvId::SimpleCrossing { size, crossings } => GridSpec::simple_crossing(size, crossings, &mut rng)?,
            EnvId::FourRooms => GridSpec::four_rooms(&mut rng),
        };
        spec.validate()?;
        Ok(spec)
    }
}

pub fn make_env(id: &str, seed: u64) -> Result<GridWorld> {
    GridWorld::new(id.parse::<EnvId>()?.build_spec(seed)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridState {
    pub agent_pos: Cell,
    pub agent_dir: Direction,
    /// Present when the goal is drawn per episode.
    pub goal_pos: Option<Cell>,
}

/// A grid environment. Passages are fixed at construction and shared by
/// every state; they are appended to the state encoding.
#[derive(Debug, Clone)]
pub struct GridWorld {
    spec: GridSpec,
    space: FactoredSpace,
    floor: Vec<Cell>,
}

impl GridWorld {
    pub fn new(spec: GridSpec) -> Result<Self> {
        spec.validate()?;
        let (iw, ih) = (spec.width - 2, spec.height - 2);
        let mut blocks = vec![iw, ih, 4];
        for _ in &spec.passages {
            blocks.extend([iw, ih, 2]);
        }
        if spec.goal_mode == GoalMode::RandomPerEpisode {
            blocks.extend([iw, ih]);
        }
        let floor = spec.floor_cells();
        Ok(Self {
            spec,
            space: FactoredSpace::new(blocks),
            floor,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn floor_cells(&self) -> &[Cell] {
        &self.floor
    }

    /// Interior extent `(width - 2, height - 2)` of the position blocks.
    pub fn interior(&self) -> (usize, usize) {
        (self.spec.width - 2, self.spec.height - 2)
    }

    /// Feature `z = (x, y)` of the agent; ignores direction and action.
    pub fn position_feature(&self, state: &GridState, _action: GridAction) -> Cell {
        state.agent_pos
    }

    pub fn goal_of(&self, state: &GridState) -> Cell {
        match self.spec.goal_mode {
            GoalMode::Fixed(g) => g,
            GoalMode::RandomPerEpisode => state.goal_pos.expect("random-goal states carry their goal"),
        }
    }

    pub fn is_valid(&self, state: &GridState) -> bool {
        let goal_ok = match self.spec.goal_mode {
            GoalMode::Fixed(_) => state.goal_pos.is_none(),
            GoalMode::RandomPerEpisode => state.goal_pos.is_some_and(|g| !self.spec.is_wall(g)),
        };
        goal_ok && !self.spec.is_wall(state.agent_pos)
    }

    /// Deterministic dynamics with four actions.
    pub fn transition(&self, state: &GridState, action: GridAction) -> (GridState, f64) {
        let goal = self.goal_of(state);
        if state.agent_pos == goal {
            return (state.clone(), 0.0);
        }
        let mut next = state.clone();
        match action {
            GridAction::TurnLeft => next.agent_dir = state.agent_dir.left(),
            GridAction::TurnRight => next.agent_dir = state.agent_dir.right(),
            GridAction::Stay => {}
            GridAction::Forward => {
                let (dx, dy) = state.agent_dir.delta();
                let (x, y) = state.agent_pos;
                let target = ((x as isize + dx) as usize, (y as isize + dy) as usize);
                if !self.spec.is_wall(target) {
                    next.agent_pos = target;
                }
            }
        }
        let reward = if next.agent_pos == goal { 1.0 } else { 0.0 };
        (next, reward)
    }

    pub fn decode(&self, components: &[usize]) -> Option<GridState> {
        if !self.space.contains(components) {
            return None;
        }
        let base = 3 + 3 * self.spec.passages.len();
        let state = GridState {
            agent_pos: (components[0] + 1, components[1] + 1),
            agent_dir: Direction::from_index(components[2]),
            goal_pos: (self.spec.goal_mode == GoalMode::RandomPerEpisode)
                .then(|| (components[base] + 1, components[base + 1] + 1)),
        };
        (self.is_valid(&state) && self.encode(&state) == components).then_some(state)
    }

    /// Every valid state, in a fixed order. Grows with the goal count when
    /// the goal is random.
    pub fn enumerate_states(&self) -> Vec<GridState> {
        let goals: Vec<Option<Cell>> = match self.spec.goal_mode {
            GoalMode::Fixed(_) => vec![None],
            GoalMode::RandomPerEpisode => self.floor.iter().map(|&c| Some(c)).collect(),
        };
        let mut states = Vec::with_capacity(goals.len() * self.floor.len() * 4);
        for goal_pos in goals {
            for &agent_pos in &self.floor {
                for agent_dir in Direction::ALL {
                    states.push(GridState { agent_pos, agent_dir, goal_pos });
                }
            }
        }
        states
    }

    fn start_candidates(&self, goal: Cell) -> Vec<Cell> {
        self.floor.iter().copied().filter(|&c| c != goal).collect()
    }
}

impl Environment for GridWorld {
    type State = GridState;

    fn n_actions(&self) -> usize {
        GridAction::COUNT
    }

    fn space(&self) -> &FactoredSpace {
        &self.space
    }

    fn encode(&self, state: &GridState) -> Vec<usize> {
        let mut c = Vec::with_capacity(self.space.n_blocks());
        c.extend([state.agent_pos.0 - 1, state.agent_pos.1 - 1, state.agent_dir.index()]);
        for p in &self.spec.passages {
            let orient = match p.orientation {
                WallOrientation::Vertical => 0,
                WallOrientation::Horizontal => 1,
            };
            c.extend([p.cell.0 - 1, p.cell.1 - 1, orient]);
        }
        if let Some((gx, gy)) = state.goal_pos {
            c.extend([gx - 1, gy - 1]);
        }
        c
    }

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> GridState {
        let (goal, goal_pos) = match self.spec.goal_mode {
            GoalMode::Fixed(g) => (g, None),
            GoalMode::RandomPerEpisode => {
                let g = self.floor[rng.random_range(0..self.floor.len())];
                (g, Some(g))
            }
        };
        let (agent_pos, agent_dir) = match self.spec.start_mode {
            StartMode::Fixed(pos, dir) => (pos, dir),
            StartMode::RandomPerEpisode => {
                let candidates = self.start_candidates(goal);
                let pos = candidates[rng.random_range(0..candidates.len())];
                (pos, Direction::from_index(rng.random_range(0..4)))
            }
        };
        GridState { agent_pos, agent_dir, goal_pos }
    }

    fn step<R: Rng + ?Sized>(&self, state: &GridState, action: usize, _rng: &mut R) -> StepOutcome<GridState> {
        let (next, reward) = self.transition(state, GridAction::from_index(action));
        let absorbed = next.agent_pos == self.goal_of(&next);
        StepOutcome { next, reward, absorbed }
    }
}

/// Exact tabular counterpart of a grid, with the state index map.
#[derive(Debug, Clone)]
pub struct TabularGrid {
    pub mdp: TabularMdp,
    pub states: Vec<GridState>,
    index: HashMap<GridState, usize>,
}

impl TabularGrid {
    pub fn index_of(&self, state: &GridState) -> Option<usize> {
        self.index.get(state).copied()
    }
}

/// Enumerates the grid into an explicit MDP. Goal states self-loop with zero
/// reward, so rollouts of the two agree until the simulator stops.
pub fn to_tabular(world: &GridWorld, gamma: f64, state_cap: usize) -> Result<TabularGrid> {
    let states = world.enumerate_states();
    if states.len() > state_cap {
        return Err(Error::StateSpaceTooLarge { states: states.len(), cap: state_cap });
    }
    let n = states.len();
    let index: HashMap<GridState, usize> = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    let na = GridAction::COUNT;
    let mut transition = vec![0.0; n * na * n];
    let mut reward = vec![0.0; n * na];
    for (i, s) in states.iter().enumerate() {
        for action in GridAction::ALL {
            let (next, r) = world.transition(s, action);
            let a = action.index();
            transition[(i * na + a) * n + index[&next]] = 1.0;
            reward[i * na + a] = r;
        }
    }
    let mut initial = vec![0.0; n];
    match (world.spec.start_mode, world.spec.goal_mode) {
        (StartMode::Fixed(pos, dir), GoalMode::Fixed(_)) => {
            initial[index[&GridState { agent_pos: pos, agent_dir: dir, goal_pos: None }]] = 1.0;
        }
        (start, goal_mode) => {
            let goals: Vec<(Cell, Option<Cell>)> = match goal_mode {
                GoalMode::Fixed(g) => vec![(g, None)],
                GoalMode::RandomPerEpisode => world.floor.iter().map(|&g| (g, Some(g))).collect(),
            };
            let p_goal = 1.0 / goals.len() as f64;
            for (goal, goal_pos) in goals {
                match start {
                    StartMode::Fixed(pos, dir) => {
                        initial[index[&GridState { agent_pos: pos, agent_dir: dir, goal_pos }]] += p_goal;
                    }
                    StartMode::RandomPerEpisode => {
                        let cands = world.start_candidates(goal);
                        let p = p_goal / (cands.len() * 4) as f64;
                        for pos in cands {
                            for dir in Direction::ALL {
                                initial[index[&GridState { agent_pos: pos, agent_dir: dir, goal_pos }]] += p;
                            }
                        }
                    }
                }
            }
        }
    }
    // re-normalise away accumulated rounding
    let total: f64 = initial.iter().sum();
    initial.iter_mut().for_each(|p| *p /= total);
    let mdp = TabularMdp::new(n, na, transition, reward, initial, gamma)?;
    Ok(TabularGrid { mdp, states, index })
}
