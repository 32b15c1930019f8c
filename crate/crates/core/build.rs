use std::process::Command;

fn main() {
    println!("cargo:rerun-if-env-changed=D2K_SOFTWARE_COMMIT");
    if std::env::var("D2K_SOFTWARE_COMMIT").is_ok() {
        return;
    }
    let head = Command::new("git").args(["rev-parse", "HEAD"]).output();
    if let Ok(out) = head {
        let commit = String::from_utf8_lossy(&out.stdout).trim().to_string();
        if out.status.success() && commit.len() == 40 {
            println!("cargo:rustc-env=D2K_SOFTWARE_COMMIT={commit}");
        }
    }
    if let Ok(out) = Command::new("git").args(["rev-parse", "--git-dir"]).output() {
        let git_dir = String::from_utf8_lossy(&out.stdout).trim().to_string();
        if out.status.success() {
            println!("cargo:rerun-if-changed={git_dir}/HEAD");
        }
    }
}
