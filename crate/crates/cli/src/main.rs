fn main() {
    println!("subdforms");
}
