//! Gridworlds: ASCII maps, multi-room layouts and their MDPs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    Wall,
    Free,
    Goal,
    Firepit,
    Hallway,
}

impl Cell {
    pub fn glyph(self) -> char {
        match self {
            Cell::Wall => '#',
            Cell::Free => '.',
            Cell::Goal => 'G',
            Cell::Firepit => 'F',
            Cell::Hallway => 'H',
        }
    }

    pub fn from_glyph(c: char) -> Option<Self> {
        Some(match c {
            '#' => Cell::Wall,
            '.' => Cell::Free,
            'G' => Cell::Goal,
            'F' => Cell::Firepit,
            'H' => Cell::Hallway,
            _ => return None,
        })
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Cell::Goal | Cell::Firepit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    fn delta(self) -> (isize, isize) {
        match self {
            Direction::Up => (-1, 0),
            Direction::Down => (1, 0),
            Direction::Left => (0, -1),
            Direction::Right => (0, 1),
        }
    }
}

/// Rooms-layout variants used as alternative source tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Default,
    TwoGoals,
    Firepit,
    NoGoal,
    NegativeHallways,
    ThreeActions,
    Gravity,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Default,
        Variant::TwoGoals,
        Variant::Firepit,
        Variant::NoGoal,
        Variant::NegativeHallways,
        Variant::ThreeActions,
        Variant::Gravity,
    ];
}

/// A gridworld: cell layout plus dynamics and reward parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    /// Row-major cell kinds.
    pub cells: Vec<Cell>,
    pub action_set: Vec<Direction>,
    /// Probability mass not given to the intended direction.
    pub slip: f64,
    /// Extra downward drift applied after the slip model.
    pub gravity_slide: f64,
    pub goal_reward: f64,
    pub firepit_reward: f64,
    pub hallway_reward: f64,
}

pub const DEFAULT_SLIP: f64 = 0.1;
pub const GRAVITY_SLIDE: f64 = 0.1;
pub const NEGATIVE_HALLWAY_REWARD: f64 = -1.0;

impl GridSpec {
    /// Grid with default dynamics (4 actions, slip 0.1, +1 goal, -1 firepit).
    pub fn with_cells(rows: usize, cols: usize, cells: Vec<Cell>) -> Self {
        Self {
            rows,
            cols,
            cells,
            action_set: Direction::ALL.to_vec(),
            slip: DEFAULT_SLIP,
            gravity_slide: 0.0,
            goal_reward: 1.0,
            firepit_reward: -1.0,
            hallway_reward: 0.0,
        }
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.cols + col]
    }

    pub fn set_cell(&mut self, row: usize, col: usize, cell: Cell) {
        self.cells[row * self.cols + col] = cell;
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.cells.len() != self.rows * self.cols {
            return Err(Error::config(format!("grid {}x{} has {} cells", self.rows, self.cols, self.cells.len())));
        }
        if !self.cells.iter().any(|&c| matches!(c, Cell::Free | Cell::Hallway)) {
            return Err(Error::config("grid needs at least one free cell"));
        }
        if self.action_set.is_empty() {
            return Err(Error::config("empty action set"));
        }
        let mut seen = self.action_set.clone();
        seen.sort_by_key(|d| *d as u8);
        seen.dedup();
        if seen.len() != self.action_set.len() {
            return Err(Error::config("duplicate direction in action set"));
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.slip) || !unit(self.gravity_slide) || self.slip + self.gravity_slide > 1.0 {
            return Err(Error::config(format!(
                "slip {} and gravity {} must lie in [0,1] with sum <= 1",
                self.slip, self.gravity_slide
            )));
        }
        Ok(())
    }

    /// Maps each non-wall cell to its MDP state index (row-major order).
    pub fn state_index(&self) -> Vec<Option<usize>> {
        let mut next = 0;
        self.cells
            .iter()
            .map(|&c| {
                (c != Cell::Wall).then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    }

    /// `(row, col)` of every MDP state.
    pub fn state_cells(&self) -> Vec<(usize, usize)> {
        (0..self.cells.len()).filter(|&k| self.cells[k] != Cell::Wall).map(|k| (k / self.cols, k % self.cols)).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::with_capacity(self.rows * (self.cols + 1));
        for r in 0..self.rows {
            out.extend((0..self.cols).map(|c| self.cell(r, c).glyph()));
            out.push('\n');
        }
        out
    }

    fn cell_reward(&self, cell: Cell) -> f64 {
        match cell {
            Cell::Goal => self.goal_reward,
            Cell::Firepit => self.firepit_reward,
            Cell::Hallway => self.hallway_reward,
            Cell::Free | Cell::Wall => 0.0,
        }
    }

    /// Cell reached from `(row, col)` by `dir`; walls and the border block.
    fn step(&self, row: usize, col: usize, dir: Direction) -> (usize, usize) {
        let (dr, dc) = dir.delta();
        let (r, c) = (row as isize + dr, col as isize + dc);
        if r < 0 || c < 0 || r >= self.rows as isize || c >= self.cols as isize {
            return (row, col);
        }
        let (r, c) = (r as usize, c as usize);
        if self.cell(r, c) == Cell::Wall {
            (row, col)
        } else {
            (r, c)
        }
    }
}

/// Parses an ASCII map (`#` wall, `.` free, `G` goal, `F` firepit,
/// `H` hallway) into a grid with default dynamics.
pub fn parse_grid(text: &str) -> Result<GridSpec> {
    let lines: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
    let Some(first) = lines.first() else {
        return Err(Error::Parse { line: 1, column: 1, message: "empty map".into() });
    };
    let cols = first.chars().count();
    let mut cells = Vec::with_capacity(lines.len() * cols);
    for (li, line) in lines.iter().enumerate() {
        let width = line.chars().count();
        if width != cols {
            return Err(Error::Parse {
                line: li + 1,
                column: width.min(cols) + 1,
                message: format!("row has {width} cells, expected {cols}"),
            });
        }
        for (ci, ch) in line.chars().enumerate() {
            let cell = Cell::from_glyph(ch).ok_or_else(|| Error::Parse {
                line: li + 1,
                column: ci + 1,
                message: format!("unknown glyph {ch:?}"),
            })?;
            cells.push(cell);
        }
    }
    Ok(GridSpec::with_cells(lines.len(), cols, cells))
}

/// Compiles a grid into an MDP.
///
/// The intended direction gets `1 - slip`; the slip mass is split evenly
/// over the other directions of the action set plus staying put. Blocked
/// moves stay. Gravity then moves `gravity_slide` of the mass, proportionally
/// from every outcome, to the cell below. Rewards are paid on entering a
/// cell and folded into `R(s, a)` as an expectation. Goals and firepits are
/// absorbing; episodes start uniformly over the remaining cells.
pub fn grid_to_mdp(spec: &GridSpec, discount: f64) -> Result<TabularMdp<f64>> {
    spec.validate()?;
    let index = spec.state_index();
    let coords = spec.state_cells();
    let ns = coords.len();
    let na = spec.action_set.len();
    let slip_share = spec.slip / na as f64;

    let mut transitions = Vec::with_capacity(ns * na);
    let mut rewards = Vec::with_capacity(ns * na);
    let mut terminal = vec![false; ns];
    for (s, &(r, c)) in coords.iter().enumerate() {
        let here = spec.cell(r, c);
        if here.is_terminal() {
            terminal[s] = true;
            for _ in 0..na {
                transitions.push(vec![(s, 1.0)]);
                rewards.push(0.0);
            }
            continue;
        }
        let target = |(rr, cc): (usize, usize)| index[rr * spec.cols + cc].expect("non-wall cell");
        for &intended in &spec.action_set {
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(na + 2);
            row.push((target(spec.step(r, c, intended)), 1.0 - spec.slip));
            for &other in spec.action_set.iter().filter(|&&d| d != intended) {
                row.push((target(spec.step(r, c, other)), slip_share));
            }
            row.push((s, slip_share));
            if spec.gravity_slide > 0.0 {
                for entry in &mut row {
                    entry.1 *= 1.0 - spec.gravity_slide;
                }
                row.push((target(spec.step(r, c, Direction::Down)), spec.gravity_slide));
            }
            row.retain(|&(_, p)| p > 0.0);
            row.sort_by_key(|&(n, _)| n);
            row.dedup_by(|later, earlier| {
                if later.0 == earlier.0 {
                    earlier.1 += later.1;
                    true
                } else {
                    false
                }
            });
            let reward = row.iter().map(|&(n, p)| p * spec.cell_reward(spec.cell(coords[n].0, coords[n].1))).sum();
            transitions.push(row);
            rewards.push(reward);
        }
    }
    let starts = terminal.iter().filter(|t| !**t).count();
    if starts == 0 {
        return Err(Error::config("grid has no non-terminal cell to start from"));
    }
    let initial = terminal.iter().map(|&t| if t { 0.0 } else { 1.0 / starts as f64 }).collect();
    TabularMdp::new(ns, na, transitions, rewards, discount, terminal, initial)
}

/// Parametric multi-room layout: a `rooms_y x rooms_x` lattice of square
/// rooms separated by one-cell walls, neighbouring rooms joined by a single
/// hallway cell at the middle of their shared wall.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoomsLayout {
    pub rooms_x: usize,
    pub rooms_y: usize,
    pub room_size: usize,
    pub variant: Variant,
    /// Row-major room index holding the goal.
    pub goal_room: usize,
}

impl RoomsLayout {
    pub fn new(rooms_x: usize, rooms_y: usize, room_size: usize, variant: Variant) -> Self {
        Self { rooms_x, rooms_y, room_size, variant, goal_room: 0 }
    }

    pub fn with_goal_room(mut self, room: usize) -> Self {
        self.goal_room = room;
        self
    }

    pub fn num_rooms(&self) -> usize {
        self.rooms_x * self.rooms_y
    }

    /// Grid coordinates of the centre of room `room` (row-major).
    pub fn room_center(&self, room: usize) -> (usize, usize) {
        let stride = self.room_size + 1;
        let (ry, rx) = (room / self.rooms_x, room % self.rooms_x);
        (ry * stride + 1 + self.room_size / 2, rx * stride + 1 + self.room_size / 2)
    }

    pub fn grid(&self) -> Result<GridSpec> {
        let (rx, ry, size) = (self.rooms_x, self.rooms_y, self.room_size);
        if rx == 0 || ry == 0 {
            return Err(Error::config("rooms layout needs at least one room in each direction"));
        }
        if size < 3 {
            return Err(Error::config(format!("room size {size} below the minimum of 3")));
        }
        let rooms = rx * ry;
        if self.goal_room >= rooms {
            return Err(Error::config(format!("goal room {} of {rooms}", self.goal_room)));
        }
        let needs_two = matches!(self.variant, Variant::TwoGoals | Variant::Firepit | Variant::NegativeHallways);
        if needs_two && rooms < 2 {
            return Err(Error::config(format!("variant {:?} needs at least two rooms", self.variant)));
        }

        let stride = size + 1;
        let (rows, cols) = (ry * stride + 1, rx * stride + 1);
        let mut grid = GridSpec::with_cells(rows, cols, vec![Cell::Wall; rows * cols]);
        for room in 0..rooms {
            let (top, left) = ((room / rx) * stride + 1, (room % rx) * stride + 1);
            for r in top..top + size {
                for c in left..left + size {
                    grid.set_cell(r, c, Cell::Free);
                }
            }
        }
        let mid = size / 2;
        for y in 0..ry {
            for x in 0..rx {
                if x + 1 < rx {
                    grid.set_cell(y * stride + 1 + mid, (x + 1) * stride, Cell::Hallway);
                }
                if y + 1 < ry {
                    grid.set_cell((y + 1) * stride, x * stride + 1 + mid, Cell::Hallway);
                }
            }
        }

        // The room farthest from the goal room hosts the variant's extra cell.
        let far_room = if self.goal_room == rooms - 1 { 0 } else { rooms - 1 };
        let (gr, gc) = self.room_center(self.goal_room);
        match self.variant {
            Variant::NoGoal => {}
            _ => grid.set_cell(gr, gc, Cell::Goal),
        }
        match self.variant {
            Variant::TwoGoals => {
                let (r, c) = self.room_center(far_room);
                grid.set_cell(r, c, Cell::Goal);
            }
            Variant::Firepit => {
                let (r, c) = self.room_center(far_room);
                grid.set_cell(r, c, Cell::Firepit);
            }
            Variant::NegativeHallways => grid.hallway_reward = NEGATIVE_HALLWAY_REWARD,
            Variant::ThreeActions => {
                grid.action_set = vec![Direction::Left, Direction::Right, Direction::Down];
            }
            Variant::Gravity => grid.gravity_slide = GRAVITY_SLIDE,
            Variant::Default | Variant::NoGoal => {}
        }
        Ok(grid)
    }
}

/// Builds a rooms gridworld and its MDP; the goal sits in the top-left room.
pub fn build_rooms(
    rooms_x: usize,
    rooms_y: usize,
    room_size: usize,
    variant: Variant,
    discount: f64,
) -> Result<(GridSpec, TabularMdp<f64>)> {
    let grid = RoomsLayout::new(rooms_x, rooms_y, room_size, variant).grid()?;
    let mdp = grid_to_mdp(&grid, discount)?;
    Ok((grid, mdp))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_at(grid: &GridSpec, r: usize, c: usize) -> usize {
        grid.state_index()[r * grid.cols + c].unwrap()
    }

    #[test]
    fn parse_small_maps() {
        let g = parse_grid("G.").unwrap();
        assert_eq!((g.rows, g.cols), (1, 2));
        assert_eq!(g.cell(0, 0), Cell::Goal);
        let g = parse_grid("####\n#..#\n####\n").unwrap();
        assert!((0..4).all(|c| g.cell(0, c) == Cell::Wall && g.cell(2, c) == Cell::Wall));
        assert_eq!(g.cell(1, 0), Cell::Wall);
    }

    #[test]
    fn parse_errors_point_at_the_problem() {
        match parse_grid("..\n.x\n") {
            Err(Error::Parse { line: 2, column: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match parse_grid("...\n..\n") {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn render_round_trip() {
        for variant in Variant::ALL {
            let grid = RoomsLayout::new(2, 2, 5, variant).grid().unwrap();
            let back = parse_grid(&grid.render()).unwrap();
            assert_eq!(back.cells, grid.cells);
            if variant == Variant::Default {
                assert_eq!(back, grid);
            }
        }
    }

    #[test]
    fn interior_slip_split() {
        let grid = parse_grid("#####\n#...#\n#...#\n#...#\n#####").unwrap();
        let mdp = grid_to_mdp(&grid, 0.95).unwrap();
        let s = state_at(&grid, 2, 2);
        let row = mdp.row(s, 0); // up
        let p = |r, c| mdp.prob(s, 0, state_at(&grid, r, c));
        assert!((p(1, 2) - 0.9).abs() < 1e-15);
        for (r, c) in [(3, 2), (2, 1), (2, 3), (2, 2)] {
            assert!((p(r, c) - 0.025).abs() < 1e-15);
        }
        assert!((row.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn corridor_blocked_mass_stays() {
        let grid = parse_grid("#.#\n#.#\n###").unwrap();
        let mdp = grid_to_mdp(&grid, 0.95).unwrap();
        let s = state_at(&grid, 1, 1);
        assert!((mdp.prob(s, 0, state_at(&grid, 0, 1)) - 0.9).abs() < 1e-15);
        assert!((mdp.prob(s, 0, s) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn no_slip_is_deterministic() {
        let mut grid = parse_grid(".....").unwrap();
        grid.slip = 0.0;
        let mdp = grid_to_mdp(&grid, 0.9).unwrap();
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                assert_eq!(mdp.row(s, a).len(), 1);
            }
        }
    }

    #[test]
    fn three_action_slip_and_gravity() {
        let (grid, mdp) = build_rooms(2, 2, 5, Variant::ThreeActions, 0.95).unwrap();
        assert_eq!(mdp.num_actions(), 3);
        assert_eq!(grid.action_set, vec![Direction::Left, Direction::Right, Direction::Down]);
        let s = state_at(&grid, 2, 2);
        assert!((mdp.prob(s, 0, s) - 0.1 / 3.0).abs() < 1e-15);

        let (grid, mdp) = build_rooms(2, 2, 5, Variant::Gravity, 0.95).unwrap();
        let s = state_at(&grid, 4, 3);
        let left = mdp.prob(s, 2, state_at(&grid, 4, 2));
        let down = mdp.prob(s, 2, state_at(&grid, 5, 3));
        assert!((left - 0.9 * 0.9).abs() < 1e-15);
        assert!((down - (0.025 * 0.9 + 0.1)).abs() < 1e-15);
    }

    #[test]
    fn rooms_geometry() {
        let (grid, mdp) = build_rooms(2, 2, 5, Variant::Default, 0.95).unwrap();
        assert_eq!((grid.rows, grid.cols), (13, 13));
        assert_eq!(mdp.num_states(), 4 * 25 + 4);
        assert_eq!(grid.cells.iter().filter(|&&c| c == Cell::Goal).count(), 1);
        assert_eq!(grid.cell(3, 3), Cell::Goal);
        let (_, mdp) = build_rooms(3, 2, 8, Variant::Default, 0.95).unwrap();
        assert_eq!(mdp.num_states(), 6 * 64 + 7);
    }

    #[test]
    fn single_room_rejects_hallway_variant() {
        assert!(matches!(build_rooms(1, 1, 5, Variant::NegativeHallways, 0.9), Err(Error::Config(_))));
        assert!(build_rooms(1, 1, 5, Variant::Default, 0.9).is_ok());
        assert!(build_rooms(2, 2, 2, Variant::Default, 0.9).is_err());
    }

    #[test]
    fn goal_reward_folded_into_expectation() {
        let grid = parse_grid("G..").unwrap();
        let mdp = grid_to_mdp(&grid, 0.9).unwrap();
        // from the middle cell, "left" enters the goal with 0.9 + slip share
        assert!((mdp.reward(1, 2) - 0.9).abs() < 1e-12);
        assert!(mdp.is_terminal(0));
        assert_eq!(mdp.initial_distribution(), &[0.0, 0.5, 0.5]);
    }
}
