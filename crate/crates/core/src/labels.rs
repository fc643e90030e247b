use std::fmt;
use std::str::FromStr;

/// The four tissue classes, ordered for reporting: benign, then grades 3-5.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClassLabel {
    Benign,
    G3,
    G4,
    G5,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 4] = [
        ClassLabel::Benign,
        ClassLabel::G3,
        ClassLabel::G4,
        ClassLabel::G5,
    ];

    pub fn index(self) -> usize {
        match self {
            ClassLabel::Benign => 0,
            ClassLabel::G3 => 1,
            ClassLabel::G4 => 2,
            ClassLabel::G5 => 3,
        }
    }

    pub fn from_index(index: usize) -> Option<ClassLabel> {
        ClassLabel::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Benign => "benign",
            ClassLabel::G3 => "g3",
            ClassLabel::G4 => "g4",
            ClassLabel::G5 => "g5",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "benign" => Ok(ClassLabel::Benign),
            "g3" => Ok(ClassLabel::G3),
            "g4" => Ok(ClassLabel::G4),
            "g5" => Ok(ClassLabel::G5),
            other => Err(format!("unknown class label '{}'", other)),
        }
    }
}
